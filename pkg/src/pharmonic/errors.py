"""Exception hierarchy shared by all modules."""


class PharmonicError(Exception):
    """Base class for every error raised by the package."""


class SingularMetric(PharmonicError):
    pass


class DomainEscape(PharmonicError):
    pass


class BadExponent(PharmonicError):
    pass


class GridMismatch(PharmonicError):
    pass


class TooCoarse(PharmonicError):
    pass


class BoundaryNode(PharmonicError):
    pass


class HypothesisViolated(PharmonicError):
    pass


class NoConvergence(PharmonicError):
    pass


class SingularLinearSystem(PharmonicError):
    pass


class DegenerateJacobian(PharmonicError):
    pass


class SignalBelowNoise(PharmonicError):
    def __init__(self, message, study=None):
        super().__init__(message)
        self.study = study


class ScheduleExhausted(PharmonicError):
    """No radius in the schedule met the Jacobian tolerance.

    The best available chart is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NonConformalInput(PharmonicError):
    pass


class UnknownGalleryItem(PharmonicError):
    pass


class UsageError(PharmonicError):
    pass
