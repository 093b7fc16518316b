"""Numeric certification of the structural optimality results.

Checks, at any set of transmit covariances: containment of each covariance's
column space in the span of the transmitter's outgoing channels plus the
full-power condition (the necessary condition for Pareto optimality); the
two-subspace equivalence in the symmetric two-user case; and the strict
rate gain from adding power along a direction the victims cannot see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .channel import ChannelSet, Covariance, reduced_basis, svd_spaces
from .exceptions import ConfigurationError, ContractViolation, VerificationError


@dataclass(frozen=True)
class ParetoReport:
    """Per-user distance from the necessary optimality structure."""

    subspace_residual: float
    power_gap: float


@dataclass(frozen=True)
class SubspaceReport:
    largest_angle_rad: float
    dim_left: int
    dim_right: int


@dataclass(frozen=True)
class LemmaReport:
    lhs: float
    rhs: float


def _as_array(q):
    return q.Q if isinstance(q, Covariance) else np.asarray(q, dtype=complex)


def check_pareto_necessary(ch: ChannelSet, Q) -> list:
    """Residuals against the Pareto-optimal covariance structure.

    subspace_residual is the scale-free distance between Q_i and its
    compression onto the span of the transmitter's stacked outgoing channels;
    power_gap is the unspent transmit power (meaningful when the transmit
    array dominates the total receive-antenna count, where optimal designs
    spend the whole budget).
    """
    if len(Q) != ch.K:
        raise ContractViolation("need one covariance per transmitter")
    reports = []
    for i in range(ch.K):
        q = _as_array(Q[i])
        upsilon = reduced_basis(ch, i).Upsilon
        proj = upsilon @ upsilon.conj().T
        compressed = proj @ q @ proj
        resid = np.linalg.norm(q - compressed) / max(1.0, np.linalg.norm(q))
        gap = ch.P[i] - float(np.real(np.trace(q)))
        reports.append(ParetoReport(subspace_residual=float(resid), power_gap=gap))
    return reports


def check_two_user_subspace(ch: ChannelSet) -> SubspaceReport:
    """Largest principal angle between the two equivalent beam-space spans
    in the symmetric two-user case.

    The first span augments the direct-channel row space with its reflection
    off the cross channel's zero-forcing space; the second uses the cross
    channel's row space directly.  The two coincide for generic channels, so
    the angle reports numerical agreement with that equivalence.
    """
    if ch.K != 2:
        raise ConfigurationError("subspace equivalence check needs exactly 2 users")
    if ch.M[0] != ch.M[1]:
        raise ConfigurationError("subspace equivalence check needs M_1 = M_2")
    if ch.N < 2 * ch.M[0]:
        raise ConfigurationError("subspace equivalence check needs N >= 2M")
    direct = svd_spaces(ch.H[0][0])
    cross = svd_spaces(ch.H[1][0])
    reflected = cross.V_perp @ (cross.V_perp.conj().T @ direct.V_par)
    left = sla.orth(np.hstack([direct.V_par, reflected]))
    right = sla.orth(np.hstack([direct.V_par, cross.V_par]))
    if left.shape[1] != right.shape[1]:
        return SubspaceReport(
            largest_angle_rad=float(np.pi / 2),
            dim_left=left.shape[1],
            dim_right=right.shape[1],
        )
    # sine-based principal angles stay accurate for nearly equal subspaces
    resid = right - left @ (left.conj().T @ right)
    sines = np.linalg.svd(resid, compute_uv=False)
    angle = float(np.arcsin(min(1.0, float(sines.max(initial=0.0)))))
    return SubspaceReport(
        largest_angle_rad=angle, dim_left=left.shape[1], dim_right=right.shape[1]
    )


def _logdet(a) -> float:
    sign, val = np.linalg.slogdet(a)
    return float(val)


def check_lemma_strict_gain(ch, i, Qprime, v, delta, others=None) -> LemmaReport:
    """Both sides of the strict log-det gain from adding delta*v*v^H.

    The direction v must excite the direct channel; others' covariances set
    the interference floor (silence by default).  Raises if the strict
    inequality fails.
    """
    if delta <= 0:
        raise ContractViolation("delta must be positive")
    h = ch.H[i][i]
    v = np.asarray(v, dtype=complex).reshape(-1)
    hv = h @ v
    if np.linalg.norm(hv) <= 1e-12 * max(1.0, np.linalg.norm(h) * np.linalg.norm(v)):
        raise ContractViolation("direction is invisible to the direct channel")
    phi = np.eye(ch.M[i], dtype=complex)
    if others is not None:
        for k in range(ch.K):
            if k == i:
                continue
            qk = _as_array(others[k])
            hq = ch.H[i][k] @ qk
            phi += hq @ ch.H[i][k].conj().T
    qp = _as_array(Qprime)
    base = phi + h @ qp @ h.conj().T
    base = 0.5 * (base + base.conj().T)
    bumped = base + delta * np.outer(hv, hv.conj())
    lhs = _logdet(bumped)
    rhs = _logdet(base)
    if not lhs > rhs:
        raise VerificationError(
            f"strict gain violated: lhs={lhs!r} rhs={rhs!r}"
        )
    return LemmaReport(lhs=lhs, rhs=rhs)
