"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ScmRelaxError(Exception):
    """Base class; ``code`` is the machine-readable tag emitted by the CLI."""

    code = "Error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class MissingUnit(ScmRelaxError):
    code = "MissingUnit"


class MissingTime(ScmRelaxError):
    code = "MissingTime"


class NonNumericCell(ScmRelaxError):
    code = "NonNumericCell"

    def __init__(self, row: int, col: int, value: str = ""):
        super().__init__(f"non-numeric cell {value!r} at row {row}, column {col}")
        self.value = value
        self.row = row
        self.col = col

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (self.row, self.col, self.value))



class TooFewPeriods(ScmRelaxError):
    code = "TooFewPeriods"


class ZeroBase(ScmRelaxError):
    code = "ZeroBase"

    def __init__(self, row: int, col: int):
        super().__init__(f"zero base value at row {row}, column {col}")
        self.row = row
        self.col = col

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (self.row, self.col))



class DegenerateSeries(ScmRelaxError):
    code = "DegenerateSeries"

    def __init__(self, unit: str):
        super().__init__(f"pre-treatment series of unit {unit!r} is constant")
        self.unit = unit

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (self.unit,))



class DimensionMismatch(ScmRelaxError):
    code = "DimensionMismatch"


class InsufficientHistory(ScmRelaxError):
    code = "InsufficientHistory"


class DomainViolation(ScmRelaxError):
    code = "DomainViolation"

    def __init__(self, j: int):
        super().__init__(f"weight {j} is outside the divergence domain")
        self.j = j

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (self.j,))



class InfeasibleRelaxation(ScmRelaxError):
    code = "InfeasibleRelaxation"

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (str(self), self.certificate))



class NumericalFailure(ScmRelaxError):
    code = "NumericalFailure"

    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = residuals or {}

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (str(self), self.residuals))



class SingularMoment(ScmRelaxError):
    code = "SingularMoment"


class RankDeficientDesign(ScmRelaxError):
    code = "RankDeficientDesign"


class SingularCore(ScmRelaxError):
    code = "SingularCore"


class BoundaryOracle(ScmRelaxError):
    code = "BoundaryOracle"

    def __init__(self, message: str, w_group=None):
        super().__init__(message)
        self.w_group = w_group

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (str(self), self.w_group))



class RankDeficient(ScmRelaxError):
    code = "RankDeficient"


class InfeasibleOracle(ScmRelaxError):
    code = "InfeasibleOracle"


class InvalidConfig(ScmRelaxError):
    code = "InvalidConfig"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field

    def to_dict(self) -> dict:
        out = super().to_dict()
        if self.field is not None:
            out["field"] = self.field
        return out

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (str(self), self.field))



class ReplicationFailure(ScmRelaxError):
    code = "ReplicationFailure"

    def __init__(self, rep: int, cause: Exception):
        super().__init__(f"replication {rep} failed: {cause}")
        self.rep = rep
        self.cause = cause

    def __reduce__(self):  # keep custom args across process boundaries
        return (type(self), (self.rep, self.cause))
