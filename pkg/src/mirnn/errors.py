"""Exception types shared across the package."""


class MirnnError(Exception):
    """Base class for all package errors."""


class ShapeError(MirnnError, ValueError):
    """An input was rejected because its dimensions do not match."""


class ConfigError(MirnnError, ValueError):
    """A configuration value or file is invalid."""


class IngestionError(MirnnError):
    """A corpus file could not be read or decoded."""


class DivergenceError(MirnnError):
    """Training produced non-finite values (NaN/Inf loss or gradients)."""


class VerificationError(MirnnError):
    """An oracle check failed."""
