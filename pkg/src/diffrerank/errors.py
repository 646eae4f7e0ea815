"""Exception types raised across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented range."""


class ShapeError(ValueError):
    """Array shapes do not agree."""


class ConditionError(ValueError):
    """A conditioning set is empty, out of range or unusable in the requested mode."""


class CalibrationError(ValueError):
    """The confidence protector cannot be calibrated from the given scores."""


class DataError(ValueError):
    """A dataset is empty or inconsistent."""


class NumericError(ArithmeticError):
    """Non-finite values reached a routine that requires finite input."""


class ContractError(RuntimeError):
    """A cached intermediate was used with parameters it was not produced from."""


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


class UnsupportedVersionError(FormatError):
    """A checkpoint declares a format version this build cannot read."""


class TruncatedFileError(OSError):
    """A file ended before its declared payload."""


class ConfigError(ValueError):
    """Malformed or out-of-range run configuration."""
