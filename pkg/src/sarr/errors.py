"""Exception hierarchy shared by all modules."""


class SARRError(Exception):
    """Base class for errors raised by this package."""


class DomainError(SARRError, ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleError(SARRError):
    """No mechanism parameters satisfy the requested privacy and error targets."""


class CappedSearchError(InfeasibleError):
    """The minimum-k search reached its cap without finding a feasible k."""


class DataError(SARRError, ValueError):
    """Input data cannot support the requested test."""


class UncalibratedError(SARRError):
    """A Laplace mechanism was used without a calibrated critical value."""
