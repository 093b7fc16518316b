"""Geometry kernel for the product search space: complex Stiefel manifold
(orthonormal frames) times the bounded power simplex.

Provides tangent-space handling, the canonical metric, the Riemannian
gradient, matrix-exponential geodesics, and projection/clipped stepping on
the power simplex.  All operations are pure functions over immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import ContractViolation

STIEFEL_TOL = 1e-10
TANGENT_TOL = 1e-10
SIMPLEX_TOL = 1e-10


@dataclass(frozen=True)
class StiefelPoint:
    """An n x p complex matrix with orthonormal columns."""

    U: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", np.asarray(self.U, dtype=complex))
        n, p = self.U.shape
        if n < p:
            raise ContractViolation("Stiefel frame needs at least as many rows as columns")
        gram = self.U.conj().T @ self.U
        if np.max(np.abs(gram - np.eye(p))) > STIEFEL_TOL:
            raise ContractViolation("columns are not orthonormal")

    @property
    def shape(self):
        return self.U.shape


@dataclass(frozen=True)
class TangentVec:
    """A direction Delta at a Stiefel point; U^H Delta is skew-Hermitian."""

    Delta: np.ndarray
    base: StiefelPoint

    def __post_init__(self):
        object.__setattr__(self, "Delta", np.asarray(self.Delta, dtype=complex))
        if self.Delta.shape != self.base.U.shape:
            raise ContractViolation("tangent shape must match its base point")
        a = self.base.U.conj().T @ self.Delta
        if np.max(np.abs(a + a.conj().T)) > TANGENT_TOL:
            raise ContractViolation("U^H Delta is not skew-Hermitian")

    def norm(self) -> float:
        return float(np.linalg.norm(self.Delta))


@dataclass(frozen=True)
class SimplexPoint:
    """Non-negative stream powers with a total-power budget.

    With exact_budget=True the powers sum to the budget (the hyperplane slice
    used when the antenna surplus forces full transmit power); otherwise the
    sum may fall below it (half-space mode).
    """

    lam: np.ndarray
    budget: float
    exact_budget: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        if self.budget <= 0:
            raise ContractViolation("power budget must be positive")
        if np.any(self.lam < 0):
            raise ContractViolation("stream powers must be non-negative")
        total = float(self.lam.sum())
        if self.exact_budget:
            if abs(total - self.budget) > SIMPLEX_TOL:
                raise ContractViolation("stream powers must sum to the budget")
        elif total > self.budget + SIMPLEX_TOL:
            raise ContractViolation("stream powers exceed the budget")

    @property
    def p(self) -> int:
        return self.lam.size


def random_stiefel(rng: np.random.Generator, n: int, p: int) -> StiefelPoint:
    """Haar-ish random orthonormal frame from the QR of a Gaussian matrix."""
    g = (rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))) / np.sqrt(2.0)
    q, _ = np.linalg.qr(g)
    return StiefelPoint(U=q)


def tangent_project(point: StiefelPoint, Z: np.ndarray) -> TangentVec:
    """Orthogonal projection of an ambient matrix onto the tangent space."""
    U = point.U
    a = U.conj().T @ np.asarray(Z, dtype=complex)
    sym = 0.5 * (a + a.conj().T)
    return TangentVec(Delta=Z - U @ sym, base=point)


def riemannian_grad(point: StiefelPoint, f_U: np.ndarray) -> TangentVec:
    """Gradient of a function on the Stiefel manifold w.r.t. the canonical metric.

    f_U holds the ambient matrix of partial derivatives; the result is the
    tangent vector g with Re tr(f_U^H Delta) = metric(g, Delta) for every
    tangent Delta.
    """
    f_U = np.asarray(f_U, dtype=complex)
    if not np.all(np.isfinite(f_U.view(float))):
        raise ContractViolation("partial-derivative matrix must be finite")
    U = point.U
    return TangentVec(Delta=f_U - U @ (f_U.conj().T @ U), base=point)


def canonical_metric(t1: TangentVec, t2: TangentVec) -> float:
    """Canonical inner product Re tr(D1^H (I - UU^H/2) D2) of two tangents."""
    if t1.base is not t2.base and not np.array_equal(t1.base.U, t2.base.U):
        raise ContractViolation("tangent vectors live at different base points")
    U = t1.base.U
    full = np.vdot(t1.Delta, t2.Delta)
    proj = np.vdot(U.conj().T @ t1.Delta, U.conj().T @ t2.Delta)
    return float(np.real(full - 0.5 * proj))


def _geodesic_arrays(U: np.ndarray, Delta: np.ndarray, t: float) -> np.ndarray:
    """Geodesic step on the Stiefel manifold, raw-array fast path.

    Builds the 2p x 2p skew-Hermitian generator from the tangent split
    A = U^H Delta (rotation inside the frame) and the skinny QR of the
    complement part, then applies its matrix exponential.
    """
    p = U.shape[1]
    a = U.conj().T @ Delta
    a = 0.5 * (a - a.conj().T)  # keep the generator exactly skew-Hermitian
    comp = Delta - U @ (U.conj().T @ Delta)
    q, r = np.linalg.qr(comp)
    gen = np.zeros((2 * p, 2 * p), dtype=complex)
    gen[:p, :p] = a
    gen[:p, p:] = -r.conj().T
    gen[p:, :p] = r
    exp_gen = sla.expm(t * gen)
    out = U @ exp_gen[:p, :p] + q @ exp_gen[p:, :p]
    drift = np.max(np.abs(out.conj().T @ out - np.eye(p)))
    if drift > STIEFEL_TOL:
        # Rounding drift guard: re-project via QR, keeping column phases.
        qq, rr = np.linalg.qr(out)
        ph = np.diag(rr).copy()
        ph = np.where(np.abs(ph) > 0, ph / np.abs(ph), 1.0)
        out = qq * ph
    return out


def geodesic(point: StiefelPoint, tangent: TangentVec, t: float) -> StiefelPoint:
    """Point reached after time t along the geodesic leaving `point` with
    initial velocity `tangent`."""
    if tangent.base is not point and not np.array_equal(tangent.base.U, point.U):
        raise ContractViolation("tangent vector is not based at the given point")
    return StiefelPoint(U=_geodesic_arrays(point.U, tangent.Delta, float(t)))


def simplex_tangent_project(eta) -> np.ndarray:
    """Orthogonal projection onto the sum-zero hyperplane (mean subtraction)."""
    eta = np.asarray(eta, dtype=float)
    return eta - eta.mean()


def _simplex_step_arrays(lam, budget, exact_budget, v, tau):
    """Clipped move lam + s*v with s = min(tau, largest feasible scale).

    The whole direction is scaled down (never clipped per coordinate); the
    first coordinate that would go negative is pinned exactly to zero at the
    limiting scale, with ties sharing the single common scale.
    """
    v = np.asarray(v, dtype=float)
    neg = v < 0
    if np.any(neg):
        scales = lam[neg] / (-v[neg])
        s_max = float(scales.min())
    else:
        s_max = np.inf
    if not exact_budget:
        gain = float(v.sum())
        if gain > 0:
            s_max = min(s_max, (budget - float(lam.sum())) / gain)
    s = min(float(tau), s_max)
    s = max(s, 0.0)
    out = lam + s * v
    if np.isfinite(s_max) and s_max <= tau:
        hit = np.zeros_like(neg)
        if np.any(neg):
            hit[np.where(neg)[0][scales <= s_max * (1 + 1e-12)]] = True
        out[hit] = 0.0
    out[out < 0] = 0.0
    if exact_budget:
        nz = out > 0
        if np.any(nz):  # distribute rounding drift so the budget holds exactly
            out[nz] += (budget - out.sum()) / nz.sum()
    return out


def simplex_step(point: SimplexPoint, v, tau: float) -> SimplexPoint:
    """Move a simplex point along a direction, staying feasible.

    In exact-budget mode the direction must lie in the sum-zero tangent plane
    (the budget is preserved); in half-space mode any direction is accepted
    and the scale additionally respects the budget ceiling.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != point.lam.shape:
        raise ContractViolation("direction size must match the point")
    if point.exact_budget and abs(v.sum()) > SIMPLEX_TOL:
        raise ContractViolation("direction must sum to zero in exact-budget mode")
    out = _simplex_step_arrays(point.lam, point.budget, point.exact_budget, v, tau)
    return SimplexPoint(lam=out, budget=point.budget, exact_budget=point.exact_budget)
