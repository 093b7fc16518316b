"""Beam design for K-user Gaussian MIMO interference channels.

Parameterizes each transmitter's covariance by an orthonormal frame on a
complex Stiefel manifold plus stream powers on the power simplex, and
maximizes weighted sum rate by alternating Riemannian steepest ascent.
"""

__version__ = "0.1.0"

from .baselines import eigen_beamforming, water_filling, zero_forcing
from .channel import (
    ChannelSet,
    Covariance,
    RateTuple,
    ReducedBasis,
    SvdSpaces,
    beamformer_matrix,
    covariance_from_params,
    generate_channels,
    rates,
    reduced_basis,
    svd_spaces,
)
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    DegenerateSolutionError,
    InfeasibleError,
    VerificationError,
)
from .manifold import (
    SimplexPoint,
    StiefelPoint,
    TangentVec,
    canonical_metric,
    geodesic,
    riemannian_grad,
    simplex_step,
    simplex_tangent_project,
)
from .optimizer import (
    BeamParams,
    SolveTrace,
    SolverConfig,
    equal_weights,
    grad_Lambda,
    grad_U,
    gradient_selfcheck,
    inner_solve,
    solve,
    wsr_utility,
)
from .verify import (
    check_lemma_strict_gain,
    check_pareto_necessary,
    check_two_user_subspace,
)

__all__ = [
    "BeamParams",
    "ChannelSet",
    "ConfigurationError",
    "ContractViolation",
    "Covariance",
    "DegenerateSolutionError",
    "InfeasibleError",
    "RateTuple",
    "ReducedBasis",
    "SimplexPoint",
    "SolveTrace",
    "SolverConfig",
    "StiefelPoint",
    "SvdSpaces",
    "TangentVec",
    "VerificationError",
    "beamformer_matrix",
    "canonical_metric",
    "check_lemma_strict_gain",
    "check_pareto_necessary",
    "check_two_user_subspace",
    "covariance_from_params",
    "eigen_beamforming",
    "equal_weights",
    "generate_channels",
    "geodesic",
    "grad_Lambda",
    "grad_U",
    "gradient_selfcheck",
    "inner_solve",
    "rates",
    "reduced_basis",
    "riemannian_grad",
    "simplex_step",
    "simplex_tangent_project",
    "solve",
    "svd_spaces",
    "water_filling",
    "wsr_utility",
    "zero_forcing",
]
