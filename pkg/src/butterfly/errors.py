"""Exception types raised across the package."""


class ButterflyError(Exception):
    """Base class for all package errors."""


class ScheduleError(ButterflyError, ValueError):
    """Invalid schedule parameters or out-of-range stage/row access."""


class CapacityError(ButterflyError):
    """A population size or enumeration budget exceeds its cap."""


class AssumptionError(ButterflyError):
    """A structural precondition (doubly-stochastic, partition, ...) fails."""


class WeightError(ButterflyError, ValueError):
    """A weight function returned a non-positive or non-finite value."""
