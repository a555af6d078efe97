"""Exception and warning types shared across the toolkit."""

from __future__ import annotations


class FairbenchError(Exception):
    """Base class for all validation and contract errors raised by fairbench."""


class MissingColumn(FairbenchError):
    def __init__(self, columns):
        self.columns = sorted(columns)
        super().__init__(f"CSV is missing required column(s): {', '.join(self.columns)}")


class UnexpectedColumn(FairbenchError):
    def __init__(self, columns):
        self.columns = sorted(columns)
        super().__init__(f"CSV has unexpected column(s): {', '.join(self.columns)}")


class UnparsableValue(FairbenchError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")


class InvariantViolation(FairbenchError):
    def __init__(self, reason: str, row: int | None = None):
        self.row = row
        self.reason = reason
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + reason)


class EmptyCohort(FairbenchError):
    pass


class InfeasibleSpec(FairbenchError):
    pass


class TooFewSamples(FairbenchError):
    pass


class DimensionMismatch(FairbenchError):
    pass


class SingleClassTraining(FairbenchError):
    pass


class NonFiniteInput(FairbenchError):
    pass


class LengthMismatch(FairbenchError):
    pass


class EmptyInput(FairbenchError):
    pass


class NoEvaluableGroups(FairbenchError):
    pass


class ConfigError(FairbenchError):
    """Invalid experiment config or cohort spec document."""


class DidNotConverge(UserWarning):
    """Optimizer hit its iteration cap; the partial model is still returned."""
