"""Exception hierarchy shared by every module."""


class DIError(Exception):
    """Base class for all package errors."""


class DimMismatch(DIError, ValueError):
    pass


class ZeroDirection(DIError, ValueError):
    pass


class Infeasible(DIError, ValueError):
    """Requested projective distance exceeds the sphere diameter."""


class PlacementExhausted(DIError, RuntimeError):
    """Greedy placement ran out of attempts before reaching the requested count."""


class RadiusMismatch(DIError, ValueError):
    pass


class DimensionUnderflow(DIError, ValueError):
    pass


class UnknownId(DIError, KeyError):
    pass


class TooFewWords(DIError, ValueError):
    pass


class EmptyCodebook(DIError, ValueError):
    pass


class SameIdPair(DIError, ValueError):
    pass


class InputOutOfBox(DIError, ValueError):
    pass


class RegimeViolation(DIError, ValueError):
    """Error exponent outside the range where the rate-reliability bound is meaningful."""


class PreconditionError(DIError, ValueError):
    """Generic violated precondition (e.g. a non-positive trial count)."""


class UsageError(DIError, ValueError):
    pass
