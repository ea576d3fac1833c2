"""Exception types shared across the package.

Everything raised on purpose derives from BloomtrackError so callers can
catch the package's failures without swallowing programming errors.
"""


class BloomtrackError(Exception):
    pass


class ValidationError(BloomtrackError):
    """A value violates a construction-time invariant."""


class ConfigError(ValidationError):
    """A run configuration is malformed or inconsistent."""


class GridParseError(ValidationError):
    """A grid file could not be parsed; message names the offending line."""


class DomainError(BloomtrackError):
    """A query point lies outside the field's bounding box."""


class MaskedRegionError(BloomtrackError):
    """The interpolation stencil touches a masked cell."""


class IllConditionedError(BloomtrackError):
    """Covariance factorization failed even at the maximum jitter level."""


class CoincidentPointError(BloomtrackError):
    """A gradient query coincides with a conditioning point."""


class FittingFailedError(BloomtrackError):
    """Hyperparameter search produced no finite objective value.

    ``best`` carries the best (params, objective) seen, if any.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class OrderingError(ValidationError):
    """Measurement timestamps must be strictly increasing."""


class InsufficientDataError(BloomtrackError):
    """Too few usable samples for the requested estimate."""


class DegenerateGeometryError(BloomtrackError):
    """Sample positions are collinear; a planar fit is underdetermined."""


class DegenerateGradientError(BloomtrackError):
    """The gradient signal is zero; no direction can be commanded."""


class MissionAbortError(BloomtrackError):
    """Mission stopped after repeated estimator failures."""
