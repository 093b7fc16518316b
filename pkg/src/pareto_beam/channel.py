"""K-pair Gaussian MIMO interference channel model.

Holds the channel instance (all cross and direct channel matrices plus
per-transmitter power budgets), computes per-pair achievable rates with
interference treated as noise, and performs the structural decompositions
(per-link SVD split into parallel/zero-forcing spaces, and the stacked-channel
rank-revealing factorization) that define the reduced beam search space.

Rates are kept in natural-log units internally; conversion to bits happens at
the I/O boundary (see :meth:`RateTuple.rates_bits`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConfigurationError,
    ContractViolation,
    DegenerateSolutionError,
)

# Tolerances used by the value-type validators.
HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
POWER_TOL = 1e-8
ORTHONORMAL_TOL = 1e-10
# Looser orthonormality bound accepted on *inputs* to covariance assembly,
# so that finite-difference probes slightly off the manifold stay evaluable.
PARAM_ORTH_TOL = 1e-8


def complex_gaussian(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """i.i.d. CN(0,1) matrix: real/imag parts independent N(0, 1/2)."""
    re = rng.standard_normal((rows, cols))
    im = rng.standard_normal((rows, cols))
    return (re + 1j * im) / np.sqrt(2.0)


def _logdet_pd(a: np.ndarray) -> float:
    """log-determinant of a Hermitian positive-definite matrix via Cholesky."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:  # unreachable for I + PSD inputs
        raise RuntimeError("matrix expected to be positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))


@dataclass(frozen=True)
class ChannelSet:
    """One realization of the K-pair (N, M_1..M_K) interference channel.

    H[i][j] is the M_i x N channel from transmitter j to receiver i.  Noise
    covariance at every receiver is the identity; P[i] is the transmit power
    budget of transmitter i on a linear scale.
    """

    K: int
    N: int
    M: tuple
    H: tuple
    P: tuple

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(int(m) for m in self.M))
        object.__setattr__(self, "P", tuple(float(p) for p in self.P))
        object.__setattr__(
            self, "H", tuple(tuple(np.asarray(h) for h in row) for row in self.H)
        )
        if self.K < 1 or len(self.M) != self.K or len(self.P) != self.K:
            raise ConfigurationError("K, M, P sizes are inconsistent")
        if any(m < 1 for m in self.M):
            raise ConfigurationError("every receiver needs at least one antenna")
        if self.N < max(self.M):
            raise ConfigurationError(
                "transmit antennas must be >= the largest receive-antenna count"
            )
        if any(p <= 0 for p in self.P):
            raise ConfigurationError("power budgets must be positive")
        if len(self.H) != self.K or any(len(row) != self.K for row in self.H):
            raise ConfigurationError("H must be a K x K grid")
        for i in range(self.K):
            for j in range(self.K):
                if self.H[i][j].shape != (self.M[i], self.N):
                    raise ConfigurationError(
                        f"H[{i}][{j}] must have shape ({self.M[i]}, {self.N})"
                    )


@dataclass(frozen=True)
class Covariance:
    """A feasible transmit covariance: Hermitian, PSD, trace within budget."""

    Q: np.ndarray
    budget: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=complex))
        q = self.Q
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ContractViolation("covariance must be square")
        if np.max(np.abs(q - q.conj().T)) > HERMITIAN_TOL:
            raise ContractViolation("covariance is not Hermitian")
        tr = float(np.real(np.trace(q)))
        eig_min = float(np.linalg.eigvalsh(q)[0])
        if eig_min < -PSD_TOL * max(tr, 1e-300):
            raise ContractViolation("covariance is not positive semi-definite")
        if self.budget is not None and tr > float(self.budget) + POWER_TOL:
            raise ContractViolation(
                f"trace {tr:.6g} exceeds power budget {self.budget:.6g}"
            )

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.Q)))


@dataclass(frozen=True)
class SvdSpaces:
    """Parallel (row-space) and vertical (zero-forcing) spaces of one link."""

    V_par: np.ndarray
    V_perp: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class ReducedBasis:
    """Orthonormal basis of the union of a transmitter's outgoing row spaces.

    Upsilon (N x rank_m) spans the column space of the stacked conjugated
    channels out of one transmitter; Rmat holds the coefficients so that
    Upsilon @ Rmat reconstructs the stack.  rank_m is the revealed numerical
    rank, which fixes the row count of the reduced beam variable.
    """

    Upsilon: np.ndarray
    Rmat: np.ndarray
    rank_m: int


@dataclass(frozen=True)
class RateTuple:
    """Per-pair rates in nats per channel use, plus an optional utility value."""

    rates: tuple
    utility: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if any(r < 0 for r in self.rates):
            raise ContractViolation("rates must be non-negative")

    def rates_bits(self) -> tuple:
        return tuple(float(r / np.log(2.0)) for r in self.rates)

    def sum_rate_bits(self) -> float:
        return float(sum(self.rates) / np.log(2.0))


def generate_channels(K, N, M, P, seed) -> ChannelSet:
    """Draw one random channel realization, deterministic in the seed.

    Entries of every H[i][j] are i.i.d. circularly-symmetric complex Gaussian
    with zero mean and unit variance.
    """
    M = tuple(int(m) for m in M)
    P = tuple(float(p) for p in P)
    if len(M) != K or len(P) != K:
        raise ConfigurationError("M and P must both have K entries")
    if any(m < 1 for m in M) or N < max(M):
        raise ConfigurationError("need M_i >= 1 and N >= max(M_i)")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    H = tuple(
        tuple(complex_gaussian(rng, M[i], N) for _ in range(K)) for i in range(K)
    )
    return ChannelSet(K=K, N=N, M=M, H=H, P=P)


def svd_spaces(H: np.ndarray) -> SvdSpaces:
    """Split C^N into the row space of H and its orthogonal complement.

    The parallel space keeps M_i columns even when H is rank deficient (the
    trailing singular values are then zero), so downstream shapes are static.
    """
    H = np.asarray(H)
    m, n = H.shape
    if n < m:
        raise ConfigurationError("svd_spaces expects a fat matrix (N >= M_i)")
    _, sigma, vh = np.linalg.svd(H, full_matrices=True)
    v = vh.conj().T
    return SvdSpaces(V_par=v[:, :m], V_perp=v[:, m:], sigma=sigma)


def stacked_channels(ch: ChannelSet, i: int) -> np.ndarray:
    """The N x (sum_j M_j) stack of conjugated channels out of transmitter i."""
    return np.hstack([ch.H[j][i].conj().T for j in range(ch.K)])


def reduced_basis(ch: ChannelSet, i: int) -> ReducedBasis:
    """Rank-revealing orthonormal factorization of the stacked channels.

    The numerical rank is decided from the singular values (sigma_k counts iff
    sigma_k > 1e-10 * sigma_1 * max dimension).  In the generic full-rank case
    the factor pair is the skinny QR of the stack; if the stack is rank
    deficient the basis is taken from the SVD so that Upsilon always spans the
    full column space of the stack.
    """
    stack = stacked_channels(ch, i)
    u_svd, sigma, _ = np.linalg.svd(stack, full_matrices=False)
    if sigma[0] == 0.0:
        raise ConfigurationError(f"all channels out of transmitter {i} are zero")
    tol = 1e-10 * sigma[0] * max(stack.shape)
    rank_m = int(np.sum(sigma > tol))
    if rank_m == min(stack.shape):
        q, r = np.linalg.qr(stack)
        return ReducedBasis(Upsilon=q, Rmat=r, rank_m=rank_m)
    upsilon = u_svd[:, :rank_m]
    return ReducedBasis(Upsilon=upsilon, Rmat=upsilon.conj().T @ stack, rank_m=rank_m)


def covariance_arrays(rb: ReducedBasis, U: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Raw covariance assembly Q = Upsilon U diag(lam) U^H Upsilon^H."""
    b = rb.Upsilon @ U
    q = (b * lam) @ b.conj().T
    return 0.5 * (q + q.conj().T)


def covariance_from_params(rb, U, Lambda, budget=None) -> Covariance:
    """Assemble the covariance encoded by an orthonormal frame and eigenvalues."""
    U = np.asarray(U, dtype=complex)
    lam = np.asarray(Lambda, dtype=float)
    p = U.shape[1]
    if np.max(np.abs(U.conj().T @ U - np.eye(p))) > PARAM_ORTH_TOL:
        raise ContractViolation("U must have orthonormal columns")
    if np.any(lam < -1e-12):
        raise ContractViolation("eigenvalues must be non-negative")
    lam = np.maximum(lam, 0.0)
    return Covariance(Q=covariance_arrays(rb, U, lam), budget=budget)


def rates_arrays(ch: ChannelSet, Qs) -> tuple:
    """Per-pair rates (nats) from raw covariance arrays, no validation."""
    out = []
    for i in range(ch.K):
        phi = np.eye(ch.M[i], dtype=complex)
        for j in range(ch.K):
            if j == i:
                continue
            hq = ch.H[i][j] @ Qs[j]
            phi += hq @ ch.H[i][j].conj().T
        sig = ch.H[i][i] @ Qs[i] @ ch.H[i][i].conj().T
        total = phi + sig
        total = 0.5 * (total + total.conj().T)
        phi = 0.5 * (phi + phi.conj().T)
        out.append(max(_logdet_pd(total) - _logdet_pd(phi), 0.0))
    return tuple(out)


def rates(ch: ChannelSet, Q) -> RateTuple:
    """Achievable rate of every pair with interference treated as noise.

    Computed as logdet(noise+interference+signal) - logdet(noise+interference)
    with Cholesky-based determinants for numerical robustness.
    """
    arrays = [q.Q if isinstance(q, Covariance) else np.asarray(q) for q in Q]
    if len(arrays) != ch.K:
        raise ContractViolation("need one covariance per transmitter")
    return RateTuple(rates=rates_arrays(ch, arrays), utility=None)


def beamformer_matrix(rb: ReducedBasis, U, Lambda, rank_threshold: float) -> np.ndarray:
    """Beamformer whose columns carry the active streams of a solution.

    Eigenvalues are sorted descending; a stream counts as active when its
    power exceeds rank_threshold times the total allocated power.
    """
    U = np.asarray(U, dtype=complex)
    lam = np.asarray(Lambda, dtype=float)
    order = np.argsort(lam)[::-1]
    lam_sorted = lam[order]
    total = float(lam.sum())
    d = int(np.sum(lam_sorted > rank_threshold * total))
    if d == 0:
        raise DegenerateSolutionError("all stream powers fall below the rank threshold")
    cols = rb.Upsilon @ U[:, order[:d]]
    return cols * np.sqrt(lam_sorted[:d])


def stream_ranks(lam_list, budgets, rank_threshold: float) -> tuple:
    """Number of active streams per transmitter at a given threshold."""
    return tuple(
        int(np.sum(np.asarray(lam) > rank_threshold * float(p)))
        for lam, p in zip(lam_list, budgets)
    )
