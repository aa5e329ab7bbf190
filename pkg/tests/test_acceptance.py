"""Acceptance criteria at their stated tolerances.

Each test records one ``criterion <n>: PASS|FAIL`` line, printed in the
terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from enkf_rare.diffusion import default_problem
from enkf_rare.harness import ExperimentConfig, run_batch
from enkf_rare.mixtures import VMFNMixture, fit_mixture, log_std_normal, mixture_logweight
from enkf_rare.tempering import stopping_cv
from enkf_rare.theory import (TheoryScenario, discrete_vs_continuous, integrate_particle_flow,
                              limit_mean, predicted_moments)

pytestmark = pytest.mark.acceptance


def batch(problem, J, delta, trials, **kw):
    t0 = time.perf_counter()
    res = run_batch(ExperimentConfig(problem=problem, J=J, delta_target=delta, trials=trials,
                                     base_seed=1000, deterministic=True, **kw))
    return res, time.perf_counter() - t0


def describe(res, secs):
    s = res.stats
    return (f"mean={s.mean_pf:.4e} ref={s.reference_pf:.4e} bias={s.rel_bias:.3f} "
            f"relRMSE={s.rel_rmse:.3f} kept={s.n_kept}/{s.n_trials} "
            f"unfiltered_mean={s.mean_pf_all:.4e} errors={res.n_errors} time={secs:.0f}s")


def test_convex(criterion):
    res, secs = batch("convex", 2000, 0.25, 100, family="vMFNM", K=1, localization="global")
    s = res.stats
    criterion("1", res.n_errors == 0 and s.rel_bias <= 0.10 and s.rel_rmse <= 0.5, describe(res, secs))


def test_parabolic(criterion):
    res, secs = batch("parabolic", 2000, 1.0, 100, K=2, localization="local", alpha=2.0)
    s = res.stats
    criterion("2", res.n_errors == 0 and s.rel_bias <= 0.15 and s.rel_rmse <= 0.8, describe(res, secs))


def test_series(criterion):
    res, secs = batch("series", 2000, 5.0, 100, K=4, localization="local", alpha=0.25)
    criterion("3", res.n_errors == 0 and res.stats.rel_bias <= 0.20, describe(res, secs))


def test_diffusion(criterion):
    frac = float(default_problem().nu.sum())
    res, secs = batch("diffusion1d", 2000, 10.0, 50, family="vMFNM", K=1, localization="global")
    ok = res.n_errors == 0 and res.stats.rel_bias <= 0.25 and 0.85 <= frac <= 0.89
    criterion("4", ok, f"KL fraction={frac:.5f} " + describe(res, secs))


def test_stopping_identity(criterion):
    def delta_of(n_fail, J):
        g = np.ones(J)
        g[:n_fail] = 0.0
        return stopping_cv(g)

    # failure fraction required by each target, from the identity p = 1 / (1 + delta^2)
    p_025 = 1.0 / (1.0 + 0.25**2)
    p_3 = 1.0 / (1.0 + 3.0**2)
    # ensembles realising those fractions exactly: 16/17 and 1/10
    d_025 = delta_of(16_000, 17_000)
    d_3 = delta_of(1_000, 10_000)
    # the rounded anchor 0.9412 carries a 2.4e-5 rounding error, which the slope
    # |d delta / dp| ~ 2.2 turns into ~5e-5 in delta
    d_anchor = delta_of(9_412, 10_000)
    ok = (round(p_025, 4) == 0.9412 and round(p_3, 4) == 0.1
          and round(d_025, 4) == 0.25 and round(d_3, 4) == 3.0 and abs(d_anchor - 0.25) <= 1e-4)
    criterion("5", ok, f"p(0.25)={p_025:.6f} p(3)={p_3:.6f} delta(16/17)={d_025:.6f} "
                       f"delta(0.1)={d_3:.6f} delta(0.9412)={d_anchor:.6f}")


def test_meanfield_no_failure(criterion):
    t0 = time.perf_counter()
    scen = TheoryScenario(b=-2.0, d=2, J=100_000, t_end=5.0, dt=1e-3)
    tr = integrate_particle_flow(scen, "no-failure-init", np.random.default_rng(6), times=[0.5, 1, 2, 5])
    m1, c11 = predicted_moments(-2.0, tr.times)
    err_m = float(np.abs(tr.means[:, 0] - m1).max())
    err_c = float(np.abs(tr.covs[:, 0, 0] - c11).max())
    criterion("6a", err_m <= 0.02 and err_c <= 0.02,
              f"max|m1 - closed form|={err_m:.2e} max|C11 - closed form|={err_c:.2e} "
              f"time={time.perf_counter() - t0:.0f}s")


@pytest.fixture(scope="module")
def with_failure_run():
    t0 = time.perf_counter()
    scen = TheoryScenario(b=-1.0, d=2, J=100_000, t_end=1000.0, dt=0.01)
    tr = integrate_particle_flow(scen, "with-failure-init", np.random.default_rng(7),
                                 times=[50.0, 1000.0], dt_growth=True)
    return tr, time.perf_counter() - t0


def test_meanfield_with_failure_t50(criterion, with_failure_run):
    tr, secs = with_failure_run
    target = limit_mean(-1.0, 2)
    gap = float(np.linalg.norm(tr.means[1] - target))
    criterion("6b", gap <= 0.02, f"t=50 mean={tr.means[1, 0]:.5f} limit={target[0]:.5f} "
                                 f"gap={gap:.4f} time={secs:.0f}s")


def test_meanfield_with_failure_long_horizon(criterion, with_failure_run):
    # companion to 6b: the same trajectory reaches the limit once t is large enough
    tr, _ = with_failure_run
    target = limit_mean(-1.0, 2)
    gap = float(np.linalg.norm(tr.means[2] - target))
    criterion("6c", gap <= 0.02, f"t=1000 mean={tr.means[2, 0]:.5f} limit={target[0]:.5f} gap={gap:.4f}")


def test_meanfield_failure_particles_frozen(criterion, with_failure_run):
    tr, _ = with_failure_run
    f = tr.failure_mask
    ok = f.any() and np.array_equal(tr.final[f], tr.initial[f])
    criterion("6d", ok, f"{int(f.sum())} failure particles bit-identical after t=1000: {ok}")


def test_unbiasedness(criterion):
    res, secs = batch("affine(1,0,-2)", 1000, 1.0, 500, family="vMFNM", K=1, localization="global")
    x = res.estimates
    se = x.std(ddof=1) / math.sqrt(x.size)
    ref = norm.cdf(-2.0)
    criterion("7", res.n_errors == 0 and abs(x.mean() - ref) <= 3 * se,
              f"grand mean={x.mean():.6f} ref={ref:.7f} |diff|/SE={abs(x.mean() - ref) / se:.2f} "
              f"time={secs:.0f}s")


def _em_dataset(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(2, 6))
    K = int(r.integers(2, 4))
    centres = 3.0 * r.standard_normal((K, d))
    x = np.vstack([c + r.uniform(0.3, 1.5) * r.standard_normal((200, d)) for c in centres])
    return x, K


def test_mixture_correctness(criterion):
    worst = {}
    for family in ("GM", "vMFNM"):
        drops = []
        for seed in range(50):
            x, K = _em_dataset(seed)
            _, rep = fit_mixture(family, x, K, rng=np.random.default_rng(seed))
            drops.append(np.diff(rep.history).min() if len(rep.history) > 1 else 0.0)
        worst[family] = float(min(drops))
    mono = all(w >= -1e-9 for w in worst.values())

    rng = np.random.default_rng(88)
    model = VMFNMixture([0.6, 0.4], [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]], [4.0, 10.0], [2.0, 5.0], [4.0, 9.0])
    n, scale = 1_000_000, 2.0
    u = scale * rng.standard_normal((n, 3))
    w = np.exp(model.logpdf(u) - log_std_normal(u / scale) + 3 * math.log(scale))
    integral, se = w.mean(), w.std() / math.sqrt(n)
    norm_ok = abs(integral - 1.0) <= 3 * se

    chi = VMFNMixture([1.0], [[1.0, 0.0, 0.0]], [0.0], [1.5], [3.0])
    lw = float(np.abs(mixture_logweight(chi, rng.standard_normal((10_000, 3)))).max())
    criterion("8", mono and norm_ok and lw <= 1e-10,
              f"worst EM step GM={worst['GM']:.1e} vMFNM={worst['vMFNM']:.1e}; "
              f"integral={integral:.4f}+-{se:.4f}; chi-matched max|logweight|={lw:.1e}")


def test_discrete_to_continuous(criterion):
    rep = discrete_vs_continuous(TheoryScenario(b=-2.0, d=2, J=10_000, t_end=1.0))
    devs = [rep[h]["max_deviation"] for h in (0.1, 0.05, 0.025)]
    criterion("9", devs[0] > devs[1] > devs[2],
              "deviations " + ", ".join(f"h={h}: {v:.2e}" for h, v in zip((0.1, 0.05, 0.025), devs)))
