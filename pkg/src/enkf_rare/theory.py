"""Mean-field behaviour of the noise-free EnKF for ``G(u) = u_1 - b``.

Closed-form mean and covariance trajectories, the large-time limit of the
ensemble mean, and a particle-flow integrator to check them against.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .enkf import Ensemble, UpdateConfig, enkf_step_global

SNAP_TOL = 1e-12
MAX_HALVINGS = 40


@dataclass(frozen=True)
class TheoryScenario:
    b: float
    d: int = 2
    J: int = 100_000
    t_end: float = 5.0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.b < 0:
            raise ValueError("the theory assumes b < 0")
        if self.d < 1 or self.J < 2 or not self.dt > 0:
            raise ValueError("invalid scenario")

    @property
    def a(self) -> np.ndarray:
        return np.eye(self.d)[0]

    def G(self, u):
        return u[:, 0] - self.b


def u_mlfp(b: float, d: int = 1) -> np.ndarray:
    out = np.zeros(d)
    out[0] = b
    return out


def u_opt(b: float, d: int = 1) -> np.ndarray:
    """Mean of the standard normal conditioned on ``u_1 < b``."""
    out = np.zeros(d)
    # Mills ratio via logs so that very negative b does not underflow
    out[0] = -np.exp(norm.logpdf(b) - norm.logcdf(b))
    return out


def predicted_moments(b: float, t):
    """``(m_1(t), C_11(t))`` when no particle starts in the failure domain."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    root = np.sqrt(2.0 * t + 1.0)
    return b * (1.0 - 1.0 / root), 1.0 / (1.0 + 2.0 * t)


def relative_distance(t):
    """``|m(t) - u_mlfp| / |u_mlfp|`` without initial failure particles."""
    return 1.0 / np.sqrt(2.0 * np.asarray(t, dtype=float) + 1.0)


def limit_mean(b: float, d: int = 1) -> np.ndarray:
    """Large-time, large-ensemble mean: ``(1-pf) u_mlfp + pf u_opt`` with ``pf = Phi(b)``."""
    pf = norm.cdf(b)
    return (1.0 - pf) * u_mlfp(b, d) + pf * u_opt(b, d)


@dataclass(frozen=True)
class TheoryPrediction:
    """Closed-form mean-field quantities for ``G(u) = u_1 - b`` in ``R^d``."""

    b: float
    d: int = 1

    @property
    def pf(self) -> float:
        return float(norm.cdf(self.b))

    @property
    def u_mlfp(self) -> np.ndarray:
        return u_mlfp(self.b, self.d)

    @property
    def u_opt(self) -> np.ndarray:
        return u_opt(self.b, self.d)

    @property
    def limit_mean(self) -> np.ndarray:
        return limit_mean(self.b, self.d)

    def m1_of_t(self, t):
        return predicted_moments(self.b, t)[0]

    def C11_of_t(self, t):
        return predicted_moments(self.b, t)[1]


def covariance_lower_bound(b: float, m_safe):
    """Lower bound on the 1D ensemble variance given the safe-particle mean."""
    pf = norm.cdf(b)
    uo = u_opt(b)[0]
    m_safe = np.asarray(m_safe, dtype=float)
    return (1 - pf) * m_safe**2 + pf * (1 + b * uo) - ((1 - pf) * m_safe + pf * uo) ** 2


def _match_first_moments(u, b: float) -> np.ndarray:
    """Map ``z = u_1 - b >= 0`` to ``c z^p`` so that ``u_1`` has mean 0 and variance 1.

    The map is increasing and fixes ``z = 0``, so safe particles stay safe.
    """
    z = u[:, 0] - b
    target = 1.0 / abs(b)

    def cv_gap(p):
        zp = z**p
        return zp.std() / zp.mean() - target

    lo, hi = 0.05, 1.0
    while cv_gap(hi) < 0:
        hi *= 2.0
        if hi > 64:
            raise RuntimeError("cannot match the initial moments")
    p = brentq(cv_gap, lo, hi, xtol=1e-14) if cv_gap(lo) < 0 else lo
    zp = z**p
    out = u.copy()
    out[:, 0] = b + zp * (-b / zp.mean())
    return out


def _antithetic(u):
    """Append copies with coordinates ``2..d`` negated, which zeroes ``C_1i`` for ``i >= 2``."""
    mirror = u.copy()
    mirror[:, 1:] *= -1.0
    return np.concatenate([u, mirror])


def initial_ensemble(scenario: TheoryScenario, mode: str, rng, moment_match: bool = True,
                     antithetic: bool = True) -> np.ndarray:
    """Standard normal particles.

    In ``"no-failure-init"`` mode failure draws are replaced until every
    particle is safe. With ``moment_match`` the first coordinate is then
    mapped monotonically to empirical mean 0 and variance 1, the initial
    moments the closed-form trajectory starts from. ``antithetic`` needs an
    even ``J`` and is ignored for ``d = 1``.
    """
    if mode not in ("no-failure-init", "with-failure-init"):
        raise ValueError(f"unknown mode {mode!r}")
    n = scenario.J
    antithetic = antithetic and scenario.d > 1
    if antithetic:
        if n % 2:
            raise ValueError("antithetic ensembles need an even J")
        n //= 2
    u = rng.standard_normal((n, scenario.d))
    if mode == "no-failure-init":
        bad = scenario.G(u) < 0
        while bad.any():
            u[bad] = rng.standard_normal((int(bad.sum()), scenario.d))
            bad = scenario.G(u) < 0
    if antithetic:
        u = _antithetic(u)
    if mode == "no-failure-init" and moment_match:
        u = _match_first_moments(u, scenario.b)
    return u


def moments_from(m0: float, c0: float, b: float, t):
    """``(m_1(t), C_11(t))`` of the failure-free flow from arbitrary initial moments."""
    t = np.asarray(t, dtype=float)
    denom = 1.0 + 2.0 * c0 * t
    return b + (m0 - b) / np.sqrt(denom), c0 / denom


def flow_rhs(v, b, safe_mask, failure_idx):
    """Particle velocities of the noise-free continuous-time EnKF.

    ``v`` holds the particles column-wise, shape ``(d, J)``. Safe particles
    follow ``-C_uu grad(G^2/2) + G_j/J sum_F G_k (u_k - ubar)``; failure
    particles are frozen. ``safe_mask`` is a float 0/1 vector.
    """
    J = v.shape[1]
    dv = v - v.mean(axis=1, keepdims=True)
    # C_uu a with a = e_1
    drift = dv @ dv[0] / J
    g = v[0] - b
    if failure_idx.size:
        drift -= dv[:, failure_idx] @ g[failure_idx] / J
    return (-drift)[:, None] * (g * safe_mask)[None, :]


def _rk4(v, dt, b, safe_mask, failure_idx):
    k1 = flow_rhs(v, b, safe_mask, failure_idx)
    k2 = flow_rhs(v + 0.5 * dt * k1, b, safe_mask, failure_idx)
    k3 = flow_rhs(v + 0.5 * dt * k2, b, safe_mask, failure_idx)
    k4 = flow_rhs(v + dt * k3, b, safe_mask, failure_idx)
    return v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Trajectory:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    failure_fraction: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    failure_mask: np.ndarray
    min_safe_g: float
    safe_means: np.ndarray

    def rows(self):
        """CSV rows ``t, m_1..m_d, C_11, failure_fraction``."""
        for t, m, c, f in zip(self.times, self.means, self.covs, self.failure_fraction):
            yield [float(t), *map(float, m), float(c[0, 0]), float(f)]

    def to_csv(self) -> str:
        d = self.means.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *(f"m{i + 1}" for i in range(d)), "C11", "failure_fraction"])
        for row in self.rows():
            w.writerow([repr(v) for v in row])
        return buf.getvalue()


def integrate_particle_flow(scenario: TheoryScenario, mode: str = "with-failure-init", rng=None,
                            times=None, initial=None, moment_match: bool = True,
                            antithetic: bool = True, dt_growth: bool = False,
                            dt_max: float = np.inf) -> Trajectory:
    """Integrate the flow with classical RK4 and record moments at ``times``.

    The step is ``scenario.dt``, or ``scenario.dt * (1 + t)`` capped at
    ``dt_max`` with ``dt_growth`` (the dynamics slow down like ``1/t``). A
    step that pushes a safe particle strictly past the surface is rejected
    and retried with half the step, at most 40 times. Particles that end a
    step within ``SNAP_TOL`` below the surface are put back on it.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if initial is None:
        u0 = initial_ensemble(scenario, mode, rng, moment_match, antithetic)
    else:
        u0 = np.array(initial, dtype=float)
    if u0.shape[0] < 2:
        raise ValueError("J must be >= 2")
    v = np.ascontiguousarray(u0.T)
    b = scenario.b
    failure = v[0] - b < 0
    safe = ~failure
    safe_mask = safe.astype(float)
    failure_idx = np.flatnonzero(failure)
    times = np.array([scenario.t_end] if times is None else times, dtype=float)
    times = np.unique(np.concatenate([[0.0], times]))

    rec_m, rec_c, rec_f, rec_s = [], [], [], []
    min_g = np.inf

    def record():
        rec_m.append(v.mean(axis=1))
        rec_c.append(np.atleast_2d(np.cov(v, bias=True)))
        rec_f.append(np.mean(failure))
        rec_s.append(v[:, safe].mean(axis=1) if safe.any() else np.full(v.shape[0], np.nan))

    t = 0.0
    record()
    for target in times[1:]:
        while t < target - 1e-12:
            dt = scenario.dt * (1.0 + t) if dt_growth else scenario.dt
            dt = min(dt, dt_max, target - t)
            g_old = np.where(safe, v[0] - b, np.inf)
            for _ in range(MAX_HALVINGS + 1):
                with np.errstate(over="ignore", invalid="ignore"):
                    new = _rk4(v, dt, b, safe_mask, failure_idx)
                g_new = np.where(safe, new[0] - b, np.inf)
                # the exact flow never raises G of a safe particle, so growth marks an unstable step
                grew = np.any(g_new[safe] > g_old[safe] * (1.0 + 1e-9) + SNAP_TOL)
                if g_new.min() >= -SNAP_TOL and not grew and np.all(np.isfinite(new)):
                    break
                dt *= 0.5
            else:
                raise RuntimeError("flow step rejected after 40 halvings")
            near = g_new < 0
            if near.any():
                new[0, near] = b
            v = new
            t += dt
            min_g = min(min_g, float(g_new.min()))
        record()

    return Trajectory(times, np.array(rec_m), np.array(rec_c), np.array(rec_f),
                      u0, np.ascontiguousarray(v.T), failure, min_g, np.array(rec_s))


def discrete_mean_trajectory(initial, b: float, h: float, t_end: float) -> tuple:
    """Noise-free discrete EnKF with constant step ``h``; ensemble means at ``t = n h``."""
    a = np.zeros(initial.shape[1])
    a[0] = 1.0
    lsf = lambda u: u @ a - b  # noqa: E731
    ens = Ensemble.from_lsf(lsf, initial)
    cfg = UpdateConfig(noise="none")
    n = int(round(t_end / h))
    ts, ms = [0.0], [ens.particles.mean(axis=0)]
    for k in range(1, n + 1):
        ens = enkf_step_global(ens, h, cfg, None, lsf)
        ts.append(k * h)
        ms.append(ens.particles.mean(axis=0))
    return np.array(ts), np.array(ms)


def discrete_vs_continuous(scenario: TheoryScenario, hs=(0.1, 0.05, 0.025), rng=None,
                           flow_dt: float | None = None) -> dict:
    """Max deviation of the discrete mean trajectory from the flow, per step size.

    Both paths start from the same ensemble (with failure particles) and use no
    noise. Deviations are measured on the grid of the coarsest step.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    u0 = initial_ensemble(scenario, "with-failure-init", rng, antithetic=scenario.J % 2 == 0)
    coarse = max(hs)
    n = int(round(scenario.t_end / coarse))
    grid = coarse * np.arange(n + 1)
    dt = flow_dt if flow_dt is not None else min(hs) / 10.0
    flow_s = TheoryScenario(scenario.b, scenario.d, scenario.J, scenario.t_end, dt)
    traj = integrate_particle_flow(flow_s, initial=u0, times=grid[1:])
    report = {}
    for h in hs:
        ts, ms = discrete_mean_trajectory(u0, scenario.b, h, scenario.t_end)
        idx = [int(np.argmin(np.abs(ts - t))) for t in grid]
        dev = np.linalg.norm(ms[idx] - traj.means, axis=1)
        report[h] = {"max_deviation": float(dev.max()), "deviation": dev, "times": grid}
    return report
