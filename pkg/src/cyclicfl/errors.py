"""Exception types shared across the package."""


class CyclicFLError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CyclicFLError):
    """Invalid, unknown or inconsistent configuration input."""


class DataFormatError(CyclicFLError):
    """Malformed dataset file (bad header, row, magic or length)."""


class DivergenceError(CyclicFLError):
    """Training produced a non-finite loss or parameter value."""
