"""Exception hierarchy.

Each error carries the CLI exit code it maps to: 2 usage, 3 data, 4 numerical.
"""
from __future__ import annotations


class SceError(Exception):
    exit_code = 3


class DataError(SceError):
    exit_code = 3


class NumericalError(SceError):
    exit_code = 4


class UsageError(SceError):
    exit_code = 2


class NonGriddedSites(DataError):
    pass


class EmptyField(DataError):
    pass


class EmptyLabels(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoConvectiveFields(DataError):
    pass


class DegenerateData(DataError):
    pass


class InsufficientData(UserWarning):
    pass


class NoExceedances(DataError):
    pass


class NegativeValue(DataError):
    pass


class ProbabilityOutOfRange(DataError):
    pass


class DegenerateConditioning(NumericalError):
    pass


class Unsatisfiable(DataError):
    pass


class NonConvergence(NumericalError):
    pass


class CholeskyFailure(NumericalError):
    pass


class RejectionStall(NumericalError):
    pass


class AllWeightsZero(NumericalError):
    pass


class RegionMismatch(DataError):
    pass


class EmptyRegion(DataError):
    pass


class FormatError(DataError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class LabelsRequired(UsageError):
    pass


class DigestMismatch(DataError):
    pass
