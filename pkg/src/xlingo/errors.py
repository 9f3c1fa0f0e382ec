"""Exception types shared across the package.

The CLI maps these to exit codes: usage errors 1, data/validation errors 2,
numerical failures 3.
"""


class XlingoError(Exception):
    """Base class for package errors."""


class ShapeError(XlingoError):
    """Operand shapes are inconsistent for the requested operation."""


class NumericsError(XlingoError):
    """A non-finite value reached a point where finiteness is required."""


class DataError(XlingoError):
    """Malformed input data or corpus/vocab validation failure."""


class ConfigError(XlingoError):
    """Bad experiment configuration."""


class CheckpointError(XlingoError):
    """Unreadable, corrupt, or incompatible checkpoint file."""
