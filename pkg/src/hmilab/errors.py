"""Exception hierarchy shared by every hmilab module."""


class HmiLabError(Exception):
    """Base class for all errors raised by hmilab."""


class ValidationError(HmiLabError, ValueError):
    """Input violates a documented precondition."""


class DegenerateInputError(ValidationError):
    """Input is numerically rank deficient."""


class UnsupportedBoundaryError(ValidationError):
    """Parameters sit exactly on a boundary the rate laws exclude."""


class GenerativeExponentError(ValidationError):
    """Link has a vanishing second Hermite coefficient."""


class DataError(HmiLabError, ValueError):
    """Data contains values that cannot be processed (NaN labels, ...)."""


class NumericalError(HmiLabError, ArithmeticError):
    """A numerical routine failed to converge or produced NaN."""


class BracketError(NumericalError):
    """Root bracket does not enclose a sign change."""


class ResourceError(HmiLabError, MemoryError):
    """Requested materialization exceeds the configured memory budget."""


class ConfigError(ValidationError):
    """Experiment configuration is malformed or references unknown presets."""
