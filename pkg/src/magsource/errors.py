"""Exception hierarchy. The CLI maps each family to an exit code."""


class MagsourceError(Exception):
    """Base class for all library errors."""


class ConfigError(MagsourceError, ValueError):
    """Invalid or infeasible configuration (CLI exit code 1)."""


class DataError(MagsourceError, ValueError):
    """Malformed, missing or unusable input data (CLI exit code 2)."""


class TooShortError(DataError):
    """Video has fewer frames than one sample window needs."""


class VideoRejected(DataError):
    """Every candidate window of a video was unusable."""


class NumericError(MagsourceError, ArithmeticError):
    """Non-finite values or divergence during computation (CLI exit code 3)."""
