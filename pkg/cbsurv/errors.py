"""
Exception hierarchy for cbsurv.

Every error carries the exit code the command line maps it to.
"""


class CaseBaseError(Exception):

    exit_code = 1


class UsageError(CaseBaseError):
    exit_code = 2


class DataError(CaseBaseError, ValueError):
    exit_code = 3


class ModelFormatError(DataError):
    """Model file has an unknown version or cannot be parsed"""


class NumericalError(CaseBaseError, ArithmeticError):
    exit_code = 4


class RankDeficientError(NumericalError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient in columns {self.columns}")


class SeparationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
