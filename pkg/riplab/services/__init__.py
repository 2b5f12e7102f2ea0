"""Services package - measurement, moment, tail-bound and recovery logic."""

from riplab.services.experiment_service import ExperimentService
from riplab.services.measurement_service import apply, apply_adjoint, sample_ensemble
from riplab.services.recovery_service import (
    altmin_recover,
    factored_gd_recover,
    nuclear_norm_recover,
    recovery_phase_sweep,
)
from riplab.services.tailbound_service import lower_tail_bound, upper_tail_bound

__all__ = [
    "ExperimentService",
    "apply",
    "apply_adjoint",
    "sample_ensemble",
    "altmin_recover",
    "factored_gd_recover",
    "nuclear_norm_recover",
    "recovery_phase_sweep",
    "lower_tail_bound",
    "upper_tail_bound",
]
