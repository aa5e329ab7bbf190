"""Batch experiments: seeded trials, outlier filtering and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .enkf import UpdateConfig
from .estimator import estimate_failure_probability
from .lsf import get_problem
from .tempering import TemperConfig, indicator_curves

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("seed", "pf", "levels", "evals", "failure_fraction", "flags")


@dataclass
class ExperimentConfig:
    """One batch of independent trials.

    ``localization`` is ``"global"``, ``"local"`` (fixed kernel of width
    ``alpha``) or ``"adaptive"`` (``adaptive_K`` clusters). ``None`` values are
    filled from the problem's recommended settings.
    """

    problem: str = "convex"
    J: int = 2000
    delta_target: float = 1.0
    family: str = "vMFNM"
    K: int | None = None
    localization: str | None = None
    alpha: float | None = None
    adaptive_K: int | None = None
    trials: int = 100
    base_seed: int = 0
    out: str | None = None
    reference_pf: float | None = None
    n_is: int | None = None
    deterministic: bool = False
    workers: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.J < 2 or not self.delta_target > 0:
            raise ValueError("J and delta_target must be positive")
        for name in ("K", "alpha", "adaptive_K", "reference_pf", "n_is"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")
        lsf = get_problem(self.problem)
        if self.K is None:
            self.K = lsf.recommended_mixtures
        if self.localization is None:
            self.localization = "adaptive" if self.adaptive_K else lsf.recommended_localization
        if self.localization not in ("global", "local", "adaptive"):
            raise ValueError(f"unknown localization {self.localization!r}")
        if self.localization == "local" and self.alpha is None:
            self.alpha = lsf.recommended_alpha
            if self.alpha is None:
                raise ValueError("local localization needs alpha")
        if self.localization == "adaptive" and self.adaptive_K is None:
            self.adaptive_K = self.K
        if self.reference_pf is None:
            self.reference_pf = lsf.reference_pf

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            d = json.load(fh)
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def update_config(self) -> UpdateConfig:
        if self.localization == "local":
            return UpdateConfig(localization="fixed", alpha=self.alpha)
        if self.localization == "adaptive":
            return UpdateConfig(localization="adaptive", n_clusters=self.adaptive_K)
        return UpdateConfig()


@dataclass
class BatchStats:
    n_trials: int
    n_kept: int
    mean_pf: float
    rel_rmse: float
    mean_evals: float
    outlier_fraction: float
    tukey_flag_fraction: float
    reference_pf: float
    mean_pf_all: float = math.nan

    @property
    def rel_bias(self) -> float:
        return abs(self.mean_pf - self.reference_pf) / self.reference_pf


def filter_and_stats(estimates, reference_pf: float, evals=None) -> BatchStats:
    """Drop estimates above the 99th percentile and summarise the rest.

    Tukey far-out values (``x >= Q3 + 3 IQR``) are counted but kept.
    Percentiles use linear interpolation.
    """
    if reference_pf is None or not reference_pf > 0:
        raise ValueError("reference_pf must be positive")
    x = np.asarray(estimates, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two estimates")
    q99 = np.percentile(x, 99, method="linear")
    keep = x <= q99
    q25, q75 = np.percentile(x, [25, 75], method="linear")
    tukey = x >= q75 + 3.0 * (q75 - q25)
    kept = x[keep]
    rel_rmse = math.sqrt(np.mean((kept - reference_pf) ** 2)) / reference_pf
    mean_evals = math.nan if evals is None else float(np.mean(evals))
    return BatchStats(
        n_trials=int(x.size),
        n_kept=int(kept.size),
        mean_pf=float(kept.mean()),
        rel_rmse=float(rel_rmse),
        mean_evals=mean_evals,
        outlier_fraction=float(1.0 - kept.size / x.size),
        tukey_flag_fraction=float(tukey.mean()),
        reference_pf=float(reference_pf),
        mean_pf_all=float(x.mean()),
    )


def run_trial(cfg: ExperimentConfig, seed: int) -> dict:
    """One estimate; exceptions become an ``error:<type>`` flag and a NaN estimate."""
    lsf = get_problem(cfg.problem)
    try:
        res = estimate_failure_probability(
            lsf, cfg.J, cfg.update_config(), TemperConfig(cfg.delta_target),
            family=cfg.family, K=cfg.K, n_is=cfg.n_is, seed=seed)
    except Exception as exc:  # a failing trial must not abort the batch
        log.warning("trial with seed %d failed: %s", seed, exc)
        return {"seed": seed, "pf": math.nan, "levels": -1, "evals": -1,
                "failure_fraction": math.nan, "flags": [f"error:{type(exc).__name__}"],
                "model": None}
    return {"seed": seed, "pf": res.pf_estimate, "levels": res.n_levels,
            "evals": res.eval_count, "failure_fraction": res.failure_fraction_final,
            "flags": res.flags, "model": res.model.to_dict()}


def _run_trial_packed(args):
    cfg_dict, seed = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), seed)


@dataclass
class BatchResult:
    config: ExperimentConfig
    rows: list
    stats: BatchStats | None
    n_errors: int
    paths: dict = field(default_factory=dict)

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r["pf"] for r in self.rows])

    def summary(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "n_errors": self.n_errors,
            "stats": None if self.stats is None else {**asdict(self.stats),
                                                      "rel_bias": self.stats.rel_bias},
        }


def trials_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r["seed"], repr(float(r["pf"])), r["levels"], r["evals"],
                    repr(float(r["failure_fraction"])), ";".join(r["flags"])])
    return buf.getvalue()


def run_batch(cfg: ExperimentConfig) -> BatchResult:
    """Run ``cfg.trials`` trials with seeds ``base_seed + i``.

    Trials run in worker processes unless ``cfg.deterministic`` is set or a
    single worker is available; results are identical either way. With
    ``cfg.out`` set, ``trials.csv``, ``summary.json`` and ``models.json`` are
    written there.
    """
    seeds = [cfg.base_seed + i for i in range(cfg.trials)]
    workers = cfg.workers or os.cpu_count() or 1
    if cfg.deterministic or workers == 1 or cfg.trials == 1:
        rows = [run_trial(cfg, s) for s in seeds]
    else:
        payload = [(cfg.to_dict(), s) for s in seeds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_trial_packed, payload))

    ok = [r for r in rows if not math.isnan(r["pf"])]
    n_errors = len(rows) - len(ok)
    stats = None
    if len(ok) >= 2 and cfg.reference_pf:
        stats = filter_and_stats([r["pf"] for r in ok], cfg.reference_pf, [r["evals"] for r in ok])
    result = BatchResult(cfg, rows, stats, n_errors)
    if cfg.out:
        result.paths = write_outputs(result, cfg.out)
    return result


def write_outputs(result: BatchResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trials": out / "trials.csv", "summary": out / "summary.json",
             "models": out / "models.json"}
    paths["trials"].write_text(trials_csv(result.rows))
    paths["summary"].write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    models = [{"seed": r["seed"], "model": r["model"]} for r in result.rows]
    paths["models"].write_text(json.dumps(models) + "\n")
    return {k: str(v) for k, v in paths.items()}


def emit_fig1_data(sigma_list, g_grid) -> str:
    """CSV of the smooth indicator approximations, one block of rows per sigma."""
    sigmas = [float(s) for s in sigma_list]
    if any(not s > 0 for s in sigmas):
        raise ValueError("sigma values must be positive")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sigma", "g", "enkf", "sis"))
    for s in sigmas:
        for g, e, p in indicator_curves(g_grid, s):
            w.writerow((repr(s), repr(float(g)), repr(float(e)), repr(float(p))))
    return buf.getvalue()


def crude_monte_carlo(lsf, n: int, rng, batch: int = 1_000_000):
    """Plain Monte Carlo estimate ``(pf, standard error)``."""
    if n < 1:
        raise ValueError("n must be positive")
    hits = 0
    done = 0
    while done < n:
        m = min(batch, n - done)
        hits += int(np.count_nonzero(lsf(rng.standard_normal((m, lsf.dim))) <= 0.0))
        done += m
    p = hits / n
    return p, math.sqrt(p * (1.0 - p) / n)
