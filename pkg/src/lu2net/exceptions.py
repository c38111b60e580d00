"""Exception hierarchy shared across the package."""


class LU2NetError(Exception):
    """Base class for all errors raised by lu2net."""


class ShapeError(LU2NetError, ValueError):
    """Tensor dimensions are incompatible with an operation."""


class ConfigError(LU2NetError, ValueError):
    """An operator or component was configured with invalid values."""


class NumericError(LU2NetError, ArithmeticError):
    """A NaN or Inf showed up where finite values are required."""


class GradientLookupError(LU2NetError, LookupError):
    """A gradient was requested for a tensor that is not on the tape."""


class ColorSpaceError(LU2NetError, TypeError):
    """A color conversion received a tensor tagged with the wrong space."""


class CheckpointError(LU2NetError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    """The file is truncated or its CRC32 does not match."""


class MissingTensorError(CheckpointError, KeyError):
    pass


class ShapeConflictError(CheckpointError):
    pass


class ImageDecodeError(LU2NetError, OSError):
    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path}: {reason}")
        self.path = path


class DatasetError(LU2NetError, ValueError):
    pass


class TrainingHalted(LU2NetError, RuntimeError):
    """Training stopped because the loss or a gradient became non-finite."""
