"""Exception types raised across the package."""


class EquilibError(Exception):
    """Base class for all package errors."""


class DomainError(EquilibError, ValueError):
    """A point lies outside the chart domain."""


class DegenerateMetricError(EquilibError, ValueError):
    """The metric is singular or not positive definite."""


class DegeneratePlaneError(EquilibError, ValueError):
    """Two tangent vectors do not span a plane."""


class UnsupportedDimensionError(EquilibError, ValueError):
    pass


class FieldEvaluationError(EquilibError, RuntimeError):
    pass


class EverywhereCriticalError(EquilibError, RuntimeError):
    """Almost every candidate sample sits at a critical point of the field."""


class InsufficientSamplingError(EquilibError, ValueError):
    pass


class GeometryError(EquilibError, ValueError):
    pass


class NearCriticalError(EquilibError, ValueError):
    """The gradient is too small for the requested normal-based quantity."""


class EmptyFiberError(EquilibError, ValueError):
    pass


class IntervalError(EquilibError, ValueError):
    pass


class NotClosedError(EquilibError, ValueError):
    """A bracket of two generators leaves their span."""

    def __init__(self, message, pair=None, bracket=None):
        super().__init__(message)
        self.pair = pair
        self.bracket = bracket


class RankError(EquilibError, ValueError):
    pass


class UnsupportedError(EquilibError, ValueError):
    pass


class UnboundedSupportError(EquilibError, RuntimeError):
    """The Lane-Emden profile has no zero before the integration limit."""


class ResolutionError(EquilibError, ValueError):
    pass


class RangeMismatchError(EquilibError, ValueError):
    pass


class ConfigError(EquilibError, ValueError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
