"""Exception types raised across the package."""


class KaczmarzError(Exception):
    """Base class for all errors raised by rkaccel."""


class NonFiniteError(KaczmarzError, ValueError):
    pass


class ZeroRowError(KaczmarzError, ValueError):
    pass


class ZeroRhsError(KaczmarzError, ValueError):
    pass


class DimensionError(KaczmarzError, ValueError):
    pass


class DegeneratePrecondError(KaczmarzError, ArithmeticError):
    pass


class InvalidLambdaError(KaczmarzError, ValueError):
    pass


class ScheduleExhaustedError(KaczmarzError, IndexError):
    pass


class BadShapeError(KaczmarzError, ValueError):
    pass


class SvdFailureError(KaczmarzError, ArithmeticError):
    pass


class RankDeficientError(KaczmarzError, ArithmeticError):
    pass


class InstanceLoadError(KaczmarzError, OSError):
    pass


class NoProgressWarning(UserWarning):
    """The burn-in residual did not decrease; the lambda_min estimate was clamped to 0."""
