"""Exception hierarchy shared across the package.

``CsvqrError`` marks data and pipeline failures (bad files, missing
coverage, infeasible requests); plain ``ValueError``/``TypeError`` are
reserved for programming-contract violations such as shape mismatches.
"""


class CsvqrError(Exception):
    """Base class for data and pipeline errors."""


class ParseError(CsvqrError):
    """A CSV row or header could not be parsed; message carries the line number."""


class IntegrityError(CsvqrError):
    """Timestamps within a zone are out of order, duplicated, or gapped."""


class ValidationError(CsvqrError):
    """A parsed value violates its domain invariant (e.g. power outside [0,1])."""


class CoverageError(CsvqrError):
    """The data does not cover a required period; message names the month."""


class BacktestError(CsvqrError):
    """Failure inside a backtest task, annotated with month and method."""

    def __init__(self, month: str, method: str, cause: Exception):
        self.month = month
        self.method = method
        self.cause = cause
        super().__init__(f"[backtest|{month}|{method}] {cause}")
