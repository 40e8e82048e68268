"""Exception types shared across the laboratory modules."""


class SpinLabError(Exception):
    """Base class for all package errors."""


class DomainError(SpinLabError, ValueError):
    """Evaluation point outside the valid domain of a potential or function."""


class BoundaryError(SpinLabError, ValueError):
    """Derivative query too close to a tabulation boundary."""


class UnboundedPerturbationError(SpinLabError, ValueError):
    """A perturbation that should be bounded appears to grow at the domain edge."""


class QuadratureError(SpinLabError, RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, at=None):
        super().__init__(message)
        self.at = at


class InsufficientGridError(SpinLabError, ValueError):
    """Too few usable grid nodes for the requested operation."""


class SolverError(SpinLabError, RuntimeError):
    """Root finding / optimization did not converge."""


class ShapeError(SpinLabError, ValueError):
    """Configuration or batch with an incompatible shape."""


class PartitionError(SpinLabError, ValueError):
    """Invalid partition of a discretized measure (e.g. empty block)."""


class EmptyFamilyError(SpinLabError, ValueError):
    """No usable test function in the supplied family."""


class LipschitzError(SpinLabError, ValueError):
    """A function failed its declared Lipschitz bound."""


class BlowUpError(SpinLabError, RuntimeError):
    """Trajectory diverged; a smaller time step is likely needed."""


class ConfigError(SpinLabError, ValueError):
    """Invalid experiment configuration."""
