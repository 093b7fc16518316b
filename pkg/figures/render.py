#!/usr/bin/env python3
"""Render the experiment figures from CLI output files.

Reads only the versioned CSV/JSONL schemas written by `pareto-beam run`:

  convergence : DIR/trace_seed*.jsonl  -> utility-vs-sweep line per seed
  region      : DIR/rate_region.csv    -> (R1, R2) scatter colored by method
  snr         : DIR/snr_sweep.csv      -> mean+/-std sum rate vs SNR, plus a
                stream-rank mode table printed as text

Usage:
  python figures/render.py --kind {convergence|region|snr} --in DIR --out FILE.svg

Rendering is deterministic: fixed figure geometry and fonts, pinned SVG hash
salt, no embedded timestamps; rendering the same inputs twice produces
byte-identical files.
"""

import argparse
import csv
import json
import sys
from collections import Counter, defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SCHEMA_VERSION = 1

REGION_COLUMNS = ["method", "seed", "w1", "R1_bits", "R2_bits"]
SNR_COLUMNS = ["scenario", "K", "N", "M", "snr_db", "seed", "sum_rate_bits", "ranks"]

METHOD_STYLE = {
    "proposed": ("tab:blue", "o"),
    "eigen": ("tab:orange", "s"),
    "zero_forcing": ("tab:green", "^"),
}


class SchemaError(RuntimeError):
    pass


def _deterministic_rc():
    plt.rcParams.update(
        {
            "svg.hashsalt": "pareto-beam-figures",
            "figure.figsize": (6.0, 4.5),
            "figure.dpi": 100,
            "font.family": "DejaVu Sans",
            "font.size": 10,
        }
    )


def _save(fig, out_path):
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def load_traces(in_dir):
    """Parse every trace_*.jsonl: (seed, [rows]) pairs sorted by seed."""
    paths = sorted(Path(in_dir).glob("trace_*.jsonl"))
    if not paths:
        raise SchemaError(f"no trace_*.jsonl files in {in_dir}")
    traces = []
    for path in paths:
        lines = [json.loads(x) for x in path.read_text().splitlines() if x]
        if not lines or "schema_version" not in lines[0]:
            raise SchemaError(f"{path} lacks the schema meta line")
        if lines[0]["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema {lines[0]['schema_version']}")
        body = lines[1:]
        for row in body:
            if not {"iter", "utility", "rates", "grad_norms"} <= set(row):
                raise SchemaError(f"{path}: malformed trace row {row}")
        traces.append((lines[0].get("seed"), body))
    return traces


def plot_convergence(in_dir, out_path):
    traces = load_traces(in_dir)
    _deterministic_rc()
    fig, ax = plt.subplots()
    for seed, rows in traces:
        ax.plot(
            [r["iter"] for r in rows],
            [r["utility"] for r in rows],
            label=f"seed {seed}",
        )
    ax.set_xlabel("outer sweep")
    ax.set_ylabel("weighted sum rate [bits/channel use]")
    ax.set_title("Convergence of the beam design algorithm")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, out_path)
    return len(traces)


def _read_csv(path, required):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing input file {path}")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return list(reader)


def plot_rate_region(in_dir, out_path):
    rows = _read_csv(Path(in_dir) / "rate_region.csv", REGION_COLUMNS)
    _deterministic_rc()
    fig, ax = plt.subplots()
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        pts = [(float(r["R1_bits"]), float(r["R2_bits"])) for r in rows if r["method"] == method]
        color, marker = METHOD_STYLE.get(method, ("tab:gray", "x"))
        ax.scatter(
            [p[0] for p in pts],
            [p[1] for p in pts],
            s=18,
            c=color,
            marker=marker,
            label=method,
            alpha=0.8,
            linewidths=0.0,
        )
    ax.set_xlabel("pair-1 rate [bits/channel use]")
    ax.set_ylabel("pair-2 rate [bits/channel use]")
    ax.set_title("Achievable rate pairs by design method")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, out_path)
    return methods


def rank_mode_table(rows):
    """Most common stream-rank tuple per (scenario, SNR), as text lines."""
    cells = defaultdict(Counter)
    for r in rows:
        cells[(r["scenario"], float(r["snr_db"]))][r["ranks"]] += 1
    lines = ["scenario        snr_db  modal_ranks  count"]
    for (scenario, snr), counts in sorted(cells.items()):
        modal, n = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        lines.append(f"{scenario:<15} {snr:>6g}  {modal:<11} {n:>5d}")
    return lines


def plot_snr_sweep(in_dir, out_path):
    rows = _read_csv(Path(in_dir) / "snr_sweep.csv", SNR_COLUMNS)
    _deterministic_rc()
    fig, ax = plt.subplots()
    by_scenario = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by_scenario[r["scenario"]][float(r["snr_db"])].append(float(r["sum_rate_bits"]))
    for scenario in sorted(by_scenario):
        grid = sorted(by_scenario[scenario])
        means = [sum(by_scenario[scenario][s]) / len(by_scenario[scenario][s]) for s in grid]
        stds = []
        for s in grid:
            vals = by_scenario[scenario][s]
            mu = sum(vals) / len(vals)
            stds.append((sum((v - mu) ** 2 for v in vals) / len(vals)) ** 0.5)
        ax.errorbar(grid, means, yerr=stds, marker="o", capsize=3, label=scenario)
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("sum rate [bits/channel use]")
    ax.set_title("Sum rate versus SNR")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper left", fontsize=8)
    _save(fig, out_path)
    table = rank_mode_table(rows)
    print("\n".join(table))
    return table


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=("convergence", "region", "snr"))
    parser.add_argument("--in", dest="in_dir", required=True, help="CLI output directory")
    parser.add_argument("--out", required=True, help="output SVG path")
    args = parser.parse_args(argv)
    try:
        if args.kind == "convergence":
            plot_convergence(args.in_dir, args.out)
        elif args.kind == "region":
            plot_rate_region(args.in_dir, args.out)
        else:
            plot_snr_sweep(args.in_dir, args.out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
