"""Adaptive temperature schedule for the EnKF.

Temperatures are tracked through ``inv_sigma = 1/sigma``; the prior
temperature ``sigma_0 = inf`` is ``inv_sigma = 0``. All weights use a unit
noise variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import norm


class DegenerateWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class TemperConfig:
    delta_target: float
    bisection_tol: float = 1e-10
    beta_max: float = 1e10
    beta_start: float = 1e-8

    def __post_init__(self):
        if not self.delta_target > 0:
            raise ValueError("delta_target must be positive")


@dataclass
class TemperState:
    """Current temperature and the accepted history.

    ``history`` holds one ``(sigma, step, delta_opt)`` triple per accepted level.
    """

    inv_sigma: float = 0.0
    history: list = field(default_factory=list)

    @property
    def sigma(self) -> float:
        return math.inf if self.inv_sigma == 0.0 else 1.0 / self.inv_sigma

    @property
    def step_index(self) -> int:
        return len(self.history)

    @property
    def sigmas(self) -> list:
        return [s for s, _, _ in self.history]

    def advance(self, step: float, delta_opt: float = math.nan):
        if not step > 0:
            raise ValueError("temperature step must be positive")
        self.inv_sigma += step
        self.history.append((self.sigma, step, delta_opt))


class SigmaStep(NamedTuple):
    sigma: float
    step: float
    cv: float
    unreachable: bool


def coeff_variation(w) -> float:
    """Population coefficient of variation ``std(w) / mean(w)``."""
    w = np.asarray(w, dtype=float)
    m = w.mean()
    if not m > 0:
        raise DegenerateWeightsError("degenerate weights")
    return float(w.std() / m)


def likelihood_weights(gtilde, inv_sigma_old: float, inv_sigma_new: float) -> np.ndarray:
    """Ratio of consecutive tempered likelihoods at each particle."""
    if not inv_sigma_new > inv_sigma_old >= 0:
        raise ValueError("need inv_sigma_new > inv_sigma_old >= 0")
    g = np.asarray(gtilde, dtype=float)
    return np.exp(-0.5 * (inv_sigma_new - inv_sigma_old) * g**2)


def _cv_of_step(g2, beta):
    # cv is scale-invariant, so shift by the smallest exponent to avoid
    # underflowing every weight
    return coeff_variation(np.exp(-0.5 * beta * (g2 - g2.min())))


def next_sigma(gtilde, state: TemperState, cfg: TemperConfig) -> SigmaStep:
    """Next temperature whose weights hit ``cfg.delta_target``.

    The weight CV is nondecreasing in the step ``beta = 1/sigma_new - 1/sigma``,
    so the target is bracketed by doubling ``beta`` and then bisected. If the
    target is not below the CV's supremum (or ``beta_max`` is too small to
    reach it), ``beta_max`` is returned with ``unreachable=True``.
    """
    g2 = np.asarray(gtilde, dtype=float) ** 2
    if np.ptp(g2) == 0.0:
        raise DegenerateWeightsError("no variability in auxiliary LSF values")
    target = cfg.delta_target
    # sup of the CV over finite steps: all mass on the particles with smallest g
    p_min = np.count_nonzero(g2 == g2.min()) / g2.size
    if target >= math.sqrt((1.0 - p_min) / p_min):
        return _finish(state, cfg.beta_max, _cv_of_step(g2, cfg.beta_max), True)

    lo, hi = 0.0, cfg.beta_start
    cv_hi = _cv_of_step(g2, hi)
    while cv_hi < target:
        if hi >= cfg.beta_max:
            return _finish(state, cfg.beta_max, cv_hi, True)
        lo, hi = hi, min(2.0 * hi, cfg.beta_max)
        cv_hi = _cv_of_step(g2, hi)

    while hi - lo > cfg.bisection_tol * hi:
        mid = 0.5 * (lo + hi)
        if _cv_of_step(g2, mid) < target:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    return _finish(state, beta, _cv_of_step(g2, beta), False)


def _finish(state, beta, cv, unreachable):
    inv_new = state.inv_sigma + beta
    return SigmaStep(1.0 / inv_new, beta, cv, unreachable)


def stopping_cv(gtilde) -> float:
    """CV of the weights towards the optimal IS density.

    Those weights are 1 on particles with ``gtilde == 0`` and 0 elsewhere, so the
    CV is ``sqrt((1-p)/p)`` for the failure fraction ``p``; ``inf`` if ``p == 0``.
    """
    g = np.asarray(gtilde)
    if g.size < 2:
        raise ValueError("need at least two particles")
    p = np.count_nonzero(g == 0.0) / g.size
    if p == 0.0:
        return math.inf
    return math.sqrt((1.0 - p) / p)


def indicator_curves(g_grid, sigma: float) -> np.ndarray:
    """Smooth indicator approximations on a grid of LSF values.

    Returns an ``(n, 3)`` array with columns ``g``, the EnKF factor
    ``exp(-max(0,g)^2 / (2 sigma))`` and the SIS factor ``Phi(-g / sigma)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    g = np.asarray(g_grid, dtype=float)
    gt = np.maximum(g, 0.0)
    return np.column_stack([g, np.exp(-0.5 * gt**2 / sigma), norm.cdf(-g / sigma)])
