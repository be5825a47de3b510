"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad input, CLI exit
code 3) and :class:`NumericalError` (a computation could not proceed,
CLI exit code 4). Both derive from ``ValueError``.
"""


class FdaError(ValueError):
    """Base class for all package errors."""

    exit_code = 4


class DataError(FdaError):
    exit_code = 3


class NumericalError(FdaError):
    exit_code = 4


# data problems
class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateTimePoint(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class GridMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooFewSubjects(DataError):
    pass


class EmptyInterval(DataError):
    pass


# numerical problems
class SingularSystem(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class InsufficientLocalData(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class NoFeasibleBandwidth(NumericalError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class SingularRestriction(NumericalError):
    pass


class ZeroTrace(NumericalError):
    pass


class DegenerateMixture(NumericalError):
    pass


class ZeroEigenvalue(NumericalError):
    pass


class EmptyWindow(NumericalError):
    pass
