"""Gaussian mixture density with EM fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class EMError(RuntimeError):
    pass


@dataclass
class FitReport:
    iterations: int
    log_likelihood: float
    converged: bool
    history: list = field(default_factory=list)
    component_mass: np.ndarray | None = None
    flags: list = field(default_factory=list)


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    family = "GM"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float).reshape(self.K, self.dim, self.dim)
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative and sum to one")
        self._chol = np.array([cholesky(c, lower=True) for c in self.covs])

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, u) -> np.ndarray:
        """Per-component log densities, shape ``(n, K)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.empty((u.shape[0], self.K))
        for k in range(self.K):
            L = self._chol[k]
            z = solve_triangular(L, (u - self.means[k]).T, lower=True)
            out[:, k] = (-0.5 * np.sum(z * z, axis=0) - np.log(np.diag(L)).sum()
                         - 0.5 * self.dim * LOG_2PI)
        return out

    def log_joint(self, u) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.component_logpdf(u) + np.log(self.weights)

    def logpdf(self, u):
        scalar = np.ndim(u) == 1
        lp = logsumexp(self.log_joint(u), axis=1)
        return float(lp[0]) if scalar else lp

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(self.K, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.K):
            idx = np.flatnonzero(labels == k)
            z = rng.standard_normal((idx.size, self.dim))
            out[idx] = self.means[k] + z @ self._chol[k].T
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "K": self.K,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.ravel().tolist(),
            "covariances": self.covs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        K, dim = d["K"], d["dim"]
        return cls(np.array(d["weights"]), np.array(d["means"]).reshape(K, dim),
                   np.array(d["covariances"]).reshape(K, dim, dim))


def _regularize(cov, reg):
    d = cov.shape[0]
    scale = np.trace(cov) / d
    if not scale > 0:
        scale = 1.0
    return cov + reg * scale * np.eye(d)


def kmeans_pp_seeds(x, K, rng) -> np.ndarray:
    """Indices of ``K`` seeds chosen with squared-distance weighting."""
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return np.array(idx)


def _m_step(x, resp, reg):
    mass = resp.sum(axis=0)
    weights = mass / mass.sum()
    means = (resp.T @ x) / mass[:, None]
    covs = np.empty((resp.shape[1], x.shape[1], x.shape[1]))
    for k in range(resp.shape[1]):
        xc = x - means[k]
        covs[k] = _regularize((resp[:, k, None] * xc).T @ xc / mass[k], reg)
    return GaussianMixture(weights, means, covs), mass


def gm_fit(samples, K: int, tol: float = 1e-6, max_iter: int = 500, reg: float = 1e-6,
           rng: np.random.Generator | None = None):
    """Maximum-likelihood Gaussian mixture by EM.

    Returns
    -------
    model : GaussianMixture
    report : FitReport
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    J, d = x.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if J < K * (d + 1):
        raise ValueError(f"need at least K*(d+1) = {K * (d + 1)} samples, got {J}")
    rng = rng if rng is not None else np.random.default_rng(0)

    if K == 1:
        model, mass = _m_step(x, np.ones((J, 1)), reg)
        ll = float(model.logpdf(x).sum())
        return model, FitReport(0, ll, True, [ll], mass)

    seeds = kmeans_pp_seeds(x, K, rng)
    d2 = ((x[:, None, :] - x[seeds][None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((J, K))
    resp[np.arange(J), np.argmin(d2, axis=1)] = 1.0
    # every seed owns at least itself
    resp[seeds] = np.eye(K)
    model, mass = _m_step(x, resp, reg)

    history = []
    reseeded = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lj = model.log_joint(x)
        lse = logsumexp(lj, axis=1)
        ll = float(lse.sum())
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-1]):
            converged = True
            break
        resp = np.exp(lj - lse[:, None])
        empty = resp.sum(axis=0) < 1e-10
        if empty.any():
            if reseeded:
                raise EMError("mixture component lost all responsibility mass")
            reseeded = True
            worst = np.argsort(lse)[: int(empty.sum())]
            for k, j in zip(np.flatnonzero(empty), worst):
                resp[j] = 0.0
                resp[j, k] = 1.0
            history.clear()
        model, mass = _m_step(x, resp, reg)

    return model, FitReport(it, history[-1], converged, history, mass,
                            ["reseeded"] if reseeded else [])
