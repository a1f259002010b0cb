"""Exception hierarchy shared by every module of the package."""

from sklearn.exceptions import NotFittedError


class BlurshiftError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(BlurshiftError, ValueError):
    pass


class ImageTooSmallError(BlurshiftError, ValueError):
    pass


class InvalidRangeError(BlurshiftError, ValueError):
    pass


class KernelTooLargeError(BlurshiftError, ValueError):
    pass


class DegenerateImageError(BlurshiftError, ValueError):
    """Raised when a sharp image carries no spectral content beyond DC."""


class EmptyInputError(BlurshiftError, ValueError):
    pass


class LevelMismatchError(BlurshiftError, ValueError):
    pass


class ScoreDomainError(BlurshiftError, ValueError):
    pass


class NonFiniteError(BlurshiftError, FloatingPointError):
    pass


class TooFewScenesError(BlurshiftError, ValueError):
    pass


class PoolTooSmallError(BlurshiftError, ValueError):
    pass


class CropTooLargeError(BlurshiftError, ValueError):
    pass


class InfeasibleRatioError(BlurshiftError, ValueError):
    pass


class BackendLoadError(BlurshiftError, OSError):
    pass


class ManifestMismatchError(BlurshiftError, ValueError):
    pass


class ConfigError(BlurshiftError, ValueError):
    pass


class NotConfiguredError(BlurshiftError, NotFittedError):
    """An estimator was used before ``fit`` (or equivalent configuration)."""


class TargetNotEmptyError(BlurshiftError, FileExistsError):
    pass
