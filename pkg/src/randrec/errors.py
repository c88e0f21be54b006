"""Exception types shared across the package."""


class RandrecError(Exception):
    """Base class for all package errors."""


class TensorFormatError(RandrecError):
    """Tensor file container is malformed (bad magic, version, or header)."""


class UnsupportedDtypeError(TensorFormatError):
    """Tensor file stores a dtype other than little-endian float32, C order."""


class ValidationError(RandrecError):
    """Input data violates a documented invariant (manifest, labels, frames)."""


class ShapeError(RandrecError):
    """Array shape incompatible with the requested operation."""


class ConfigurationError(RandrecError):
    """Run configuration is inconsistent or names an unreachable target."""


class StageError(RandrecError):
    """A pipeline stage failed; the message carries stage and sample context."""
