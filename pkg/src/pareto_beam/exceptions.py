"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid problem dimensions or experiment configuration."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition."""


class DegenerateSolutionError(RuntimeError):
    """A solution collapsed below the minimum usable stream rank."""


class InfeasibleError(ValueError):
    """The requested construction has an empty feasible set."""


class VerificationError(RuntimeError):
    """A numeric invariant or certification check failed."""
