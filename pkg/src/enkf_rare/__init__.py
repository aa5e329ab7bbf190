"""Rare event estimation with the ensemble Kalman filter.

The EnKF moves standard normal particles towards the failure domain of a
limit-state function through a sequence of tempered inverse problems. A
mixture density fitted to the final ensemble then serves as importance
sampling density for an unbiased failure probability estimate.
"""

from .enkf import Ensemble, UpdateConfig, run_enkf
from .estimator import RunResult, estimate_failure_probability, is_estimate
from .lsf import AffineLSF, LimitState, form_probability, get_problem, mlfp
from .tempering import TemperConfig, TemperState

__version__ = "0.1.0"

__all__ = [
    "AffineLSF", "Ensemble", "LimitState", "RunResult", "TemperConfig", "TemperState",
    "UpdateConfig", "estimate_failure_probability", "form_probability", "get_problem",
    "is_estimate", "mlfp", "run_enkf",
]
