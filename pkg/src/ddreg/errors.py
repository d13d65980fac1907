"""Exception hierarchy shared across the package."""


class DdregError(Exception):
    """Base class for all package-specific errors."""


class SpectralMismatch(DdregError):
    """Declared eigenstructure is inconsistent with the generator matrix."""


class InvalidParams(DdregError):
    """Internal-model parameters violate their admissibility conditions."""


class NonFiniteState(DdregError):
    """A simulated trajectory left the finite range (diverged or NaN)."""


class DimensionMismatch(DdregError):
    """Matrix or dataset dimensions are mutually inconsistent."""


class Infeasible(DdregError):
    """The conic solver certified the synthesis program infeasible."""


class NumericalFailure(DdregError):
    """The conic solver stalled or returned an unusable point."""


class SingularSylvester(DdregError):
    """Closed loop shares an eigenvalue with the exogenous generator."""


class InsufficientSamples(DdregError):
    """Too few samples for the requested harmonic resolution."""


class NotSettled(DdregError):
    """Trajectory did not reach its periodic steady state within the horizon."""


class ConfigError(DdregError):
    """Configuration file failed validation."""
