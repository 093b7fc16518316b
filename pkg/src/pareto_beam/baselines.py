"""Reference beamformers: single-user eigen-beamforming and zero-forcing.

Both allocate power by exact water-filling over their respective effective
channels, which is the strongest sensible configuration for each strategy.
"""

from __future__ import annotations

import warnings

import numpy as np

from .channel import ChannelSet, Covariance
from .exceptions import InfeasibleError


def water_filling(gains, total_power: float) -> np.ndarray:
    """Exact water-filling allocation over parallel channels with unit noise.

    Returns the per-mode powers q >= 0 with sum q = total_power maximizing
    sum log(1 + q_k g_k); modes with zero gain receive nothing.
    """
    g = np.asarray(gains, dtype=float)
    q = np.zeros_like(g)
    order = np.argsort(g)[::-1]
    g_sorted = g[order]
    m = int(np.sum(g_sorted > 1e-12))
    while m > 0:
        level = (total_power + np.sum(1.0 / g_sorted[:m])) / m
        if level >= 1.0 / g_sorted[m - 1]:
            break
        m -= 1
    if m == 0:
        return q
    active = order[:m]
    q[active] = level - 1.0 / g[active]
    return q


def water_level_residual(gains, q) -> float:
    """Largest violation of the water-filling optimality conditions.

    Active modes must share one water level; inactive modes must sit at or
    above it.  Zero residual certifies the allocation.
    """
    g = np.asarray(gains, dtype=float)
    q = np.asarray(q, dtype=float)
    active = q > 1e-12
    if not np.any(active):
        return 0.0
    levels = q[active] + 1.0 / g[active]
    level = levels.mean()
    res = float(np.max(np.abs(levels - level)))
    inactive = (~active) & (g > 1e-12)
    if np.any(inactive):
        res = max(res, float(np.max(level - 1.0 / g[inactive])))
    return res


def eigen_beamforming(ch: ChannelSet, i: int) -> Covariance:
    """Selfish single-user design: water-filling over the own-channel modes,
    ignoring all interference."""
    h = ch.H[i][i]
    _, sigma, vh = np.linalg.svd(h, full_matrices=False)
    v = vh.conj().T
    if sigma[0] == 0.0:
        warnings.warn(f"zero direct channel for pair {i}; degenerate beamformer")
        q = np.zeros(v.shape[1])
        q[0] = ch.P[i]
    else:
        q = water_filling(sigma**2, ch.P[i])
    cov = (v * q) @ v.conj().T
    return Covariance(Q=0.5 * (cov + cov.conj().T), budget=ch.P[i])


def zero_forcing_basis(ch: ChannelSet, i: int) -> np.ndarray:
    """Orthonormal basis of the common null space of all cross channels."""
    cross = [ch.H[j][i] for j in range(ch.K) if j != i]
    if not cross:
        return np.eye(ch.N, dtype=complex)
    stack = np.vstack(cross)
    _, sigma, vh = np.linalg.svd(stack)
    if sigma.size and sigma[0] > 0:
        rank = int(np.sum(sigma > max(stack.shape) * np.finfo(float).eps * sigma[0]))
    else:
        rank = 0
    if rank >= ch.N:
        raise InfeasibleError(
            f"cross channels of transmitter {i} leave no zero-forcing space"
        )
    return vh[rank:].conj().T


def zero_forcing(ch: ChannelSet, i: int) -> Covariance:
    """Interference-free design: water-filling restricted to the common null
    space of the channels toward all other receivers."""
    basis = zero_forcing_basis(ch, i)
    h_eff = ch.H[i][i] @ basis
    _, sigma, vh = np.linalg.svd(h_eff, full_matrices=False)
    v = vh.conj().T
    if sigma[0] == 0.0:
        warnings.warn(f"zero effective channel for pair {i}; degenerate beamformer")
        q = np.zeros(v.shape[1])
        q[0] = ch.P[i]
    else:
        q = water_filling(sigma**2, ch.P[i])
    inner = (v * q) @ v.conj().T
    cov = basis @ inner @ basis.conj().T
    return Covariance(Q=0.5 * (cov + cov.conj().T), budget=ch.P[i])
