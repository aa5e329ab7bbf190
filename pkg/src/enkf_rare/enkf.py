"""Ensemble Kalman updates for rare event estimation.

Particles are stored row-wise in a ``(J, d)`` array together with the cached
auxiliary limit-state values ``gtilde = max(0, G(u))``. The data are zero and
the noise variance is one, so one update reads

    u_j <- u_j + C_up (C_pp + 1/h)^{-1} (xi_j - gtilde_j),   xi_j ~ N(0, 1/h).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .lsf import LimitState
from .mixtures import cluster_responsibilities, fit_mixture
from .tempering import TemperConfig, TemperState, next_sigma, stopping_cv

log = logging.getLogger(__name__)

NOISE_MODES = ("scaled-gaussian", "none")


@dataclass
class Ensemble:
    particles: np.ndarray
    gtilde: np.ndarray
    generation: int = 0

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.gtilde = np.asarray(self.gtilde, dtype=float)
        if self.particles.shape[0] < 2:
            raise ValueError("an ensemble needs at least two particles")
        if self.gtilde.shape != (self.particles.shape[0],):
            raise ValueError("gtilde must hold one value per particle")

    @classmethod
    def from_lsf(cls, lsf, particles, generation: int = 0) -> "Ensemble":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        return cls(particles, np.maximum(lsf(particles), 0.0), generation)

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def failure_fraction(self) -> float:
        return float(np.mean(self.gtilde == 0.0))


@dataclass(frozen=True)
class UpdateConfig:
    """Update options.

    ``localization`` is ``"global"``, ``"fixed"`` (Gaussian kernel of width
    ``alpha``) or ``"adaptive"`` (clusters from a ``n_clusters``-component
    mixture of family ``cluster_family``).
    """

    noise: str = "scaled-gaussian"
    localization: str = "global"
    alpha: float | None = None
    n_clusters: int = 1
    cluster_family: str = "GM"
    cov_regularization: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")
        if self.localization not in ("global", "fixed", "adaptive"):
            raise ValueError(f"unknown localization {self.localization!r}")
        if self.localization == "fixed" and not (self.alpha and self.alpha > 0):
            raise ValueError("fixed localization needs alpha > 0")
        if self.localization == "adaptive" and self.n_clusters < 1:
            raise ValueError("adaptive localization needs n_clusters >= 1")

    @classmethod
    def alpha_per_dim(cls, d: int, c: float = 1.0, **kwargs) -> "UpdateConfig":
        """Fixed localisation with width proportional to the dimension."""
        return cls(localization="fixed", alpha=c * d, **kwargs)


def empirical_moments(ens: Ensemble):
    """Means and (cross-)covariances with 1/J normalisation.

    Returns ``(mean_u, mean_g, C_pp, C_up)`` with scalar ``C_pp`` and ``C_up`` of
    shape ``(d,)``.
    """
    u, g = ens.particles, ens.gtilde
    mean_u = u.mean(axis=0)
    mean_g = g.mean()
    dg = g - mean_g
    c_pp = float(dg @ dg) / ens.J
    c_up = (u - mean_u).T @ dg / ens.J
    return mean_u, float(mean_g), c_pp, c_up


def _noise(cfg: UpdateConfig, J: int, h: float, rng) -> np.ndarray:
    if cfg.noise == "none":
        return np.zeros(J)
    return rng.standard_normal(J) / np.sqrt(h)


def _refresh(ens: Ensemble, particles, lsf) -> Ensemble:
    gt = ens.gtilde if lsf is None else np.maximum(lsf(particles), 0.0)
    return Ensemble(particles, gt, ens.generation + 1)


def enkf_step_global(ens: Ensemble, h: float, cfg: UpdateConfig, rng, lsf=None, xi=None) -> Ensemble:
    """One update with ensemble-wide covariances.

    ``lsf`` refreshes the cached values; without it the old cache is carried
    over (only useful in tests). ``xi`` overrides the noise draw.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    _, _, c_pp, c_up = empirical_moments(ens)
    if xi is None:
        xi = _noise(cfg, ens.J, h, rng)
    gain = (xi - ens.gtilde) / (c_pp + 1.0 / h)
    return _refresh(ens, ens.particles + np.outer(gain, c_up), lsf)


def _normalize_columns(W):
    return W / W.sum(axis=0, keepdims=True)


def weight_matrix_fixed(ens_or_particles, alpha: float) -> np.ndarray:
    """Column-stochastic Gaussian-kernel weights ``exp(-|u_i - u_j|^2 / (2 alpha))``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    u = getattr(ens_or_particles, "particles", ens_or_particles)
    W = np.exp(-0.5 / alpha * cdist(u, u, "sqeuclidean"))
    return _normalize_columns(W)


def weight_matrix_from_clusters(particles, labels, covs) -> np.ndarray:
    """Column ``j`` uses the Mahalanobis kernel of the cluster of particle ``j``."""
    u = np.asarray(particles, dtype=float)
    W = np.empty((u.shape[0], u.shape[0]))
    for k, cov in enumerate(covs):
        cols = np.flatnonzero(labels == k)
        if cols.size == 0:
            continue
        L = cholesky(cov, lower=True)
        z = solve_triangular(L, u.T, lower=True).T
        W[:, cols] = np.exp(-0.5 * cdist(z, z[cols], "sqeuclidean"))
    return _normalize_columns(W)


def cluster_covariances(particles, labels, K: int, eps: float = 1e-8):
    covs = []
    d = particles.shape[1]
    for k in range(K):
        members = particles[labels == k]
        if members.shape[0] < 2:
            covs.append(np.eye(d))
            continue
        c = np.cov(members, rowvar=False, bias=True).reshape(d, d)
        scale = np.trace(c) / d
        covs.append(c + eps * (scale if scale > 0 else 1.0) * np.eye(d))
    return covs


def weight_matrix_adaptive(ens: Ensemble, K: int, family: str = "GM", rng=None,
                           eps: float = 1e-8) -> np.ndarray:
    """Weights from per-cluster covariances of a fitted ``K``-component mixture."""
    if K < 1:
        raise ValueError("K must be >= 1")
    u = ens.particles
    if K == 1:
        labels = np.zeros(ens.J, dtype=int)
    else:
        model, _ = fit_mixture(family, u, K, rng=rng)
        labels = cluster_responsibilities(model, u)
    return weight_matrix_from_clusters(u, labels, cluster_covariances(u, labels, K, eps))


def localized_moments(ens: Ensemble, W, j=None):
    """Column-weighted means and (cross-)covariances.

    With ``j`` given, returns the four moments of particle ``j``; otherwise
    arrays for all particles: ``ubar (J, d)``, ``gbar (J,)``, ``C_pp (J,)``,
    ``C_up (J, d)``.
    """
    u, g = ens.particles, ens.gtilde
    if j is not None:
        w = W[:, j]
        ubar = w @ u
        gbar = float(w @ g)
        dg = g - gbar
        return ubar, gbar, float(w @ (dg * dg)), (u - ubar).T @ (w * dg)
    ubar = W.T @ u
    gbar = W.T @ g
    c_pp = np.maximum(W.T @ (g * g) - gbar * gbar, 0.0)
    c_up = W.T @ (u * g[:, None]) - ubar * gbar[:, None]
    return ubar, gbar, c_pp, c_up


def enkf_step_local(ens: Ensemble, h: float, W, cfg: UpdateConfig, rng, lsf=None, xi=None) -> Ensemble:
    """One update with per-particle localised covariances (cached ``gtilde`` as data misfit)."""
    if not h > 0:
        raise ValueError("step size must be positive")
    _, _, c_pp, c_up = localized_moments(ens, W)
    if xi is None:
        xi = _noise(cfg, ens.J, h, rng)
    gain = (xi - ens.gtilde) / (c_pp + 1.0 / h)
    return _refresh(ens, ens.particles + gain[:, None] * c_up, lsf)


def weight_matrix(ens: Ensemble, cfg: UpdateConfig, rng):
    if cfg.localization == "fixed":
        return weight_matrix_fixed(ens, cfg.alpha)
    if cfg.localization == "adaptive":
        return weight_matrix_adaptive(ens, cfg.n_clusters, cfg.cluster_family, rng,
                                      cfg.cov_regularization)
    return None


def enkf_step(ens: Ensemble, h: float, cfg: UpdateConfig, rng, lsf=None) -> Ensemble:
    W = weight_matrix(ens, cfg, rng)
    if W is None:
        return enkf_step_global(ens, h, cfg, rng, lsf)
    return enkf_step_local(ens, h, W, cfg, rng, lsf)


@dataclass
class EnKFResult:
    ensemble: Ensemble
    temper: TemperState
    eval_count: int
    flags: list = field(default_factory=list)
    initial_particles: np.ndarray | None = None

    @property
    def n_levels(self) -> int:
        return self.temper.step_index


def run_enkf(lsf: LimitState, J: int, cfg: UpdateConfig, tcfg: TemperConfig, rng,
             initial=None) -> EnKFResult:
    """Adaptive EnKF iteration from the standard normal prior.

    The stopping rule is checked before every update, so an initial ensemble
    that already satisfies it is returned without updates. ``initial`` can
    supply the starting particles.
    """
    if J < 2:
        raise ValueError("J must be >= 2")
    u0 = rng.standard_normal((J, lsf.dim)) if initial is None else np.array(initial, dtype=float)
    ens = Ensemble.from_lsf(lsf, u0)
    state = TemperState()
    flags = []
    evals = J

    delta_opt = stopping_cv(ens.gtilde)
    while delta_opt >= tcfg.delta_target:
        if state.step_index >= cfg.max_iter:
            flags.append("max-iter")
            log.warning("EnKF stopped by the iteration guard after %d levels", cfg.max_iter)
            break
        step = next_sigma(ens.gtilde, state, tcfg)
        if step.unreachable:
            flags.append("cv-unreachable")
        ens = enkf_step(ens, step.step, cfg, rng, lsf)
        evals += J
        if not np.all(np.isfinite(ens.particles)):
            raise FloatingPointError("non-finite particles after EnKF update")
        delta_opt = stopping_cv(ens.gtilde)
        state.advance(step.step, delta_opt)

    return EnKFResult(ens, state, evals, sorted(set(flags)), u0)
