"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DMRError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DMRError, ValueError):
    """Invalid data or schema (maps to CLI exit status 2)."""


class NumericalError(DMRError, ArithmeticError):
    """A numerical precondition failed (maps to CLI exit status 3)."""


class UnknownLevel(InputError):
    def __init__(self, column: str, level: object, row: int):
        self.column = column
        self.level = level
        self.row = row
        super().__init__(
            f"column {column!r}: value {level!r} at row {row} is not a declared level"
        )


class TooFewRows(InputError):
    def __init__(self, n: int, p: int):
        self.n = n
        self.p = p
        super().__init__(f"need more rows than parameters, got n={n} <= p={p}")


class InvalidConstraint(InputError):
    pass


class RankDeficient(NumericalError):
    """Raised when a design (or reduced design) loses column rank.

    ``columns`` holds the names (or indices) of the columns found to be
    linearly dependent on the preceding ones.
    """

    def __init__(self, columns, message: str | None = None):
        self.columns = list(columns)
        if message is None:
            message = "design matrix is rank deficient; dependent columns: " + ", ".join(
                str(c) for c in self.columns
            )
        super().__init__(message)


class ZeroVariance(NumericalError):
    pass


class ZeroRSS(NumericalError):
    pass


class DegenerateConstraints(NumericalError):
    pass


class SeparationWarning(RuntimeWarning):
    """Logistic fit did not converge or fitted probabilities hit 0 or 1."""
