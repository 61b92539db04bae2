"""Exception types shared across the library."""


class DiabloError(Exception):
    """Base class for library errors."""


class ShapeError(DiabloError, ValueError):
    """Operand shapes or extents are incompatible."""


class ConfigError(DiabloError, ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(DiabloError, ValueError):
    """Malformed external file (IDX dataset, checkpoint, config JSON)."""
