"""Importance-sampling estimate of the failure probability from a fitted mixture."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .enkf import UpdateConfig, run_enkf
from .lsf import LimitState
from .mixtures import fit_mixture, mixture_logweight
from .tempering import TemperConfig

ESS_WARN_FRACTION = 0.01


@dataclass
class ISResult:
    pf: float
    ess: float
    max_weight_share: float
    n_failures: int
    n_samples: int


def is_estimate(lsf: LimitState, model, n: int, rng) -> ISResult:
    """Draw ``n`` fresh samples from ``model`` and average the weighted indicator."""
    u = model.sample(n, rng)
    g = lsf(u)
    fail = g <= 0.0
    w = np.zeros(n)
    if fail.any():
        w[fail] = np.exp(mixture_logweight(model, u[fail]))
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("non-finite importance weight")
    total = w.sum()
    if total > 0:
        ess = total**2 / np.sum(w * w)
        share = float(w.max() / total)
    else:
        ess, share = 0.0, 0.0
    return ISResult(float(total / n), float(ess), share, int(fail.sum()), n)


@dataclass
class RunResult:
    pf_estimate: float
    sigma_schedule: list
    n_levels: int
    eval_count: int
    failure_fraction_final: float
    model: object = field(repr=False)
    seed: int | None = None
    flags: list = field(default_factory=list)
    ess: float = math.nan

    def to_dict(self) -> dict:
        return {
            "pf": self.pf_estimate,
            "sigma_schedule": [float(s) for s in self.sigma_schedule],
            "levels": self.n_levels,
            "evals": self.eval_count,
            "failure_fraction": self.failure_fraction_final,
            "seed": self.seed,
            "flags": list(self.flags),
            "ess": self.ess,
            "model": self.model.to_dict() if self.model is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def estimate_failure_probability(lsf: LimitState, J: int, cfg: UpdateConfig, tcfg: TemperConfig,
                                 family: str = "vMFNM", K: int = 1, rng=None,
                                 n_is: int | None = None, seed: int | None = None) -> RunResult:
    """EnKF iteration, mixture fit on the final ensemble, then one IS step.

    ``n_is`` defaults to ``J``. Either ``rng`` or ``seed`` must be given.
    """
    if rng is None:
        if seed is None:
            raise ValueError("pass rng or seed")
        rng = np.random.default_rng(seed)
    n_is = J if n_is is None else n_is
    enkf = run_enkf(lsf, J, cfg, tcfg, rng)
    flags = list(enkf.flags)
    model, report = fit_mixture(family, enkf.ensemble.particles, K, rng=rng)
    flags.extend(report.flags)
    est = is_estimate(lsf, model, n_is, rng)
    if est.ess < ESS_WARN_FRACTION * n_is:
        flags.append("low-ess")
    return RunResult(
        pf_estimate=est.pf,
        sigma_schedule=enkf.temper.sigmas,
        n_levels=enkf.n_levels,
        eval_count=enkf.eval_count + n_is,
        failure_fraction_final=enkf.ensemble.failure_fraction,
        model=model,
        seed=seed,
        flags=flags,
        ess=est.ess,
    )
