"""Exception hierarchy for the sunfilter package."""


class SunFilterError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SunFilterError):
    """Input data or model specification violates a documented invariant."""


class MatrixError(SunFilterError):
    """A matrix fails a structural requirement (symmetry, positive definiteness)."""


class DimensionError(SunFilterError):
    """A problem exceeds a configured dimension cap or shapes do not match."""


class IdentifiabilityError(SunFilterError):
    """A skew-normal parameter set fails the full-rank correlation requirement."""


class ConvergenceError(SunFilterError):
    """An iterative solver did not reach its tolerance within the iteration cap."""


class InfeasibleRegionError(SunFilterError):
    """A truncation region has vanishing probability and cannot be sampled."""


class DegeneracyError(SunFilterError):
    """All particle weights collapsed to zero."""


class NumericalError(SunFilterError):
    """A numeric result is unusable (non-finite, non-positive normalizer, ...)."""


class ConfigError(SunFilterError):
    """A configuration document violates the schema.

    ``pointer`` holds a JSON-pointer path to the offending field.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer
