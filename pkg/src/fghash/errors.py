"""Exception types shared across the package."""


class FghashError(Exception):
    """Base class for package errors."""


class ShapeError(FghashError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(FghashError, ValueError):
    """A configuration value or key is invalid."""


class DataFormatError(FghashError, ValueError):
    """A persisted artifact is truncated or malformed."""


class ChecksumError(DataFormatError):
    """A persisted artifact fails its CRC32 check."""


class SupervisionError(FghashError, ValueError):
    """Pair-wise supervision is inconsistent (e.g. a row with no positive)."""
