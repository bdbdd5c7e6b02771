"""Exception hierarchy for Churn Compass.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class ChurnCompassError(Exception):
    """Base class for all library errors."""
    exit_code = 1


class InvalidInputError(ChurnCompassError, ValueError):
    """Input data or arguments violate a precondition."""
    exit_code = 3


class NonFiniteError(InvalidInputError):
    """NaN or infinite values where finite values are required."""


class ShapeMismatchError(InvalidInputError):
    """Arrays whose shapes or lengths do not line up."""


class LabelRangeError(InvalidInputError):
    """A class label outside [0, k)."""


class FormatError(ChurnCompassError):
    """A file does not follow its declared format."""
    exit_code = 3


class BadMagicError(FormatError):
    """Binary file starts with the wrong magic bytes."""


class TruncatedFileError(FormatError):
    """Binary file ends before its header says it should."""


class CsvParseError(FormatError):
    """CSV file that cannot be parsed; names the offending line."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UsageError(ChurnCompassError):
    """Missing inputs or contradictory options."""
    exit_code = 2


class ConfigError(UsageError):
    """Malformed configuration file or value."""


class NumericError(ChurnCompassError):
    """Numerical procedure failed."""
    exit_code = 4


class DivergenceError(NumericError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class ConvergenceError(NumericError):
    """Iterative solver stopped at max_iter without meeting its tolerance."""

    def __init__(self, message: str, residuals: Optional[dict] = None):
        self.residuals = dict(residuals or {})
        if self.residuals:
            detail = ", ".join(f"{k}={v:.3g}" for k, v in sorted(self.residuals.items()))
            message = f"{message} ({detail})"
        super().__init__(message)
