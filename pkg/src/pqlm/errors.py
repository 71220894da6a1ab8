"""Exception hierarchy shared by every pqlm module."""


class PqlmError(Exception):
    """Base class for all pqlm errors."""


class ConfigurationError(PqlmError, ValueError):
    """Dimensions, ranges or config values are inconsistent."""


class InputError(PqlmError, ValueError):
    """Caller-supplied data is empty, mismatched or otherwise unusable."""


class NumericError(PqlmError, ValueError):
    """Non-finite values where finite ones are required."""


class FormatError(PqlmError, ValueError):
    """A serialized artifact is malformed or truncated."""


class CorruptionError(FormatError):
    """A serialized artifact failed its integrity check."""
