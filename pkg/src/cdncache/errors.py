"""Exception hierarchy shared by all modules."""


class CacheModelError(Exception):
    """Base class for every error raised by this package."""


class MalformedConfig(CacheModelError):
    """An instance document is missing a field or has the wrong shape."""


class InfeasibleSpec(CacheModelError):
    """An instance is well formed but violates a model invariant."""


class NonIntegralRates(CacheModelError):
    pass


class InstanceTooLarge(CacheModelError):
    pass


class SupportTooLarge(CacheModelError):
    pass


class BadSizes(CacheModelError):
    pass


class CacheTooLarge(CacheModelError):
    pass


class TiedPopularities(CacheModelError):
    pass


class AllocationMismatch(CacheModelError):
    pass


class DegenerateDenominator(CacheModelError):
    pass


class StateEscapedW(CacheModelError):
    pass


class BadInitial(CacheModelError):
    pass


class UnsupportedRegime(CacheModelError):
    pass
