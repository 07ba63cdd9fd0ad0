"""
Exception types for self-normalized inference.

Every failure the library reports on purpose is a ``SnInferenceError``.
The command-line front end maps each subclass to its own exit code.
"""


class SnInferenceError(ValueError):
    """Base class for all library errors."""

    exit_code = 1


class DomainError(SnInferenceError):
    """An argument lies outside the domain of the operation."""

    exit_code = 2


class EstimatorUndefinedError(DomainError):
    """A subsample estimator cannot be computed on the given block."""


class IngestionError(SnInferenceError):
    """
    A data file could not be turned into a time series.

    Args:
        message: What went wrong
        line: 1-based line number in the file, when known
        column: 1-based column number, when known
    """

    exit_code = 3

    def __init__(self, message, line=None, column=None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigurationError(SnInferenceError):
    """Configuration, measure or table settings are unusable."""

    exit_code = 4


class TableBuildError(ConfigurationError):
    """Too many Monte Carlo draws had to be discarded while building a table."""


class SingularityError(SnInferenceError):
    """
    A normalizing matrix is singular or too badly conditioned to invert.

    Args:
        message: What went wrong
        condition_number: Ratio of largest to smallest eigenvalue (inf if singular)
    """

    exit_code = 5

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3g})")
        self.condition_number = condition_number


class BootstrapUnstableError(SingularityError):
    """Too many bootstrap replicates were degenerate."""


class IdentityFailureError(SnInferenceError):
    """An exact algebraic identity was violated beyond tolerance."""

    exit_code = 6


class UsageError(SnInferenceError):
    """The command line could not be parsed."""

    exit_code = 64


class ResampleSignal(Exception):
    """Raised by a limit functional when its path must be discarded and redrawn."""
