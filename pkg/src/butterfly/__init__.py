"""Butterfly-constrained augmented resampling for particle filters."""

__version__ = "0.1.0"

from .errors import AssumptionError, ButterflyError, CapacityError, ScheduleError, WeightError
from .schedule import Schedule, build_schedule, dense_stage, stage_row, verify_assumptions

__all__ = [
    "AssumptionError",
    "ButterflyError",
    "CapacityError",
    "ScheduleError",
    "WeightError",
    "Schedule",
    "build_schedule",
    "dense_stage",
    "stage_row",
    "verify_assumptions",
]
