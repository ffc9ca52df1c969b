"""Exception taxonomy shared by every layer of the engine."""


class PolypsegError(Exception):
    """Base class for all engine errors."""


class DimensionError(PolypsegError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(PolypsegError):
    """Invalid configuration value (stride/dilation < 1, bad variant, ...)."""


class ValidationError(PolypsegError):
    """Input data violates a value contract (e.g. non-binary mask)."""


class FormatError(PolypsegError):
    """Malformed file on disk. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(PolypsegError):
    """Non-finite value produced where finite values are required."""


class StateError(PolypsegError):
    """Optimizer/schedule state is inconsistent with the parameters."""
