"""Exception hierarchy shared by every module."""


class DetectionError(Exception):
    """Base class for all errors raised by nzdetect."""


class DomainError(DetectionError, ValueError):
    """A parameter lies outside the domain of the requested operation."""


class DimensionError(DomainError):
    """Vector or matrix dimensions do not agree."""


class DecompositionError(DetectionError, ArithmeticError):
    """Cholesky factorization failed.

    Attributes
    ----------
    pivot : int
        Zero-based index of the first non-positive pivot.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SingularEstimateError(DecompositionError):
    """A covariance estimate is rank deficient."""


class UndefinedStatisticError(DetectionError, ArithmeticError):
    """The detection statistic is 0/0 for this input (e.g. x equal to the mean)."""


class InsufficientTrialsError(DomainError):
    """Too few Monte-Carlo trials for the requested false-alarm probability."""


class CubeFormatError(DetectionError, IOError):
    """A cube file is malformed.

    Attributes
    ----------
    offset : int
        Byte offset in the file at which the problem was detected.
    """

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
