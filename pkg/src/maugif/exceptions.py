"""Exception hierarchy shared across the package."""


class MaugifError(Exception):
    """Base class for all package errors."""


class DimensionError(MaugifError, ValueError):
    """Array shapes are incompatible."""


class ConfigError(MaugifError, ValueError):
    """A configuration value is invalid."""


class UsageError(MaugifError):
    """An API was called in a way its contract forbids."""


class GraphError(MaugifError):
    """The autodiff graph references a tensor outside the tape being consumed."""


class NumericError(MaugifError, ArithmeticError):
    """A non-finite value appeared where finite values are required.

    ``report`` carries the partial training report when raised from training.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StateError(MaugifError):
    """An object is not in a state that allows the requested operation."""


class FormatError(MaugifError, ValueError):
    """A file does not conform to its on-disk format, or cannot be written in it."""
