"""von Mises-Fisher-Nakagami mixtures.

A point ``u = r a`` is modelled through its radius ``r`` (Nakagami with shape
``s`` and spread ``gamma``) and direction ``a`` (von Mises-Fisher with mean
direction ``nu`` and concentration ``kappa``). Densities returned by
:meth:`VMFNMixture.logpdf` are with respect to Lebesgue measure on ``R^d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, polygamma

from .bessel import bessel_ratio, log_vmf_normalizer
from .gm import EMError, FitReport, kmeans_pp_seeds

KAPPA_MAX = 1e7
SHAPE_MIN = 0.5
SHAPE_MAX = 1e6
MAX_PROPOSALS = 1_000_000


def nakagami_logpdf(r, s, gamma):
    r = np.asarray(r, dtype=float)
    return (np.log(2.0) + s * np.log(s) - gammaln(s) - s * np.log(gamma)
            + (2.0 * s - 1.0) * np.log(r) - s * r * r / gamma)


def vmf_logpdf(a, nu, kappa):
    """vMF log density of unit vectors ``a`` w.r.t. surface measure."""
    a = np.atleast_2d(a)
    return log_vmf_normalizer(kappa, a.shape[1]) + kappa * (a @ nu)


def polar(u):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    r = np.linalg.norm(u, axis=1)
    if np.any(r == 0.0):
        raise ValueError("vMFN densities are undefined at the origin")
    return r, u / r[:, None]


def _householder_to(nu, x):
    """Reflect rows of ``x`` so that e_1 is mapped onto ``nu``."""
    v = -nu.copy()
    v[0] += 1.0
    vv = v @ v
    if vv < 1e-30:
        return x
    return x - np.outer(x @ v, 2.0 * v / vv)


def sample_vmf(nu, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` unit vectors from vMF(nu, kappa) by tangent-normal rejection."""
    nu = np.asarray(nu, dtype=float)
    d = nu.size
    if n == 0:
        return np.empty((0, d))
    if d == 1:
        p = 1.0 / (1.0 + np.exp(-2.0 * kappa))
        return np.where(rng.random(n) < p, nu[0], -nu[0])[:, None]
    m = d - 1.0
    # envelope parameter, written to avoid cancellation at large kappa
    b = m / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + m * m))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0 * x0)

    w = np.empty(n)
    todo = np.arange(n)
    proposals = 0
    while todo.size:
        k = todo.size
        proposals += k
        if proposals > MAX_PROPOSALS * max(n, 1):
            raise RuntimeError("vMF rejection sampler exceeded the proposal budget")
        z = rng.beta(0.5 * m, 0.5 * m, size=k)
        wk = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        logu = np.log(rng.random(k))
        ok = kappa * wk + m * np.log(1.0 - x0 * wk) - c >= logu
        w[todo[ok]] = wk[ok]
        todo = todo[~ok]

    v = rng.standard_normal((n, d - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = np.column_stack([w, np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v])
    return _householder_to(nu, x)


@dataclass
class VMFNMixture:
    weights: np.ndarray
    directions: np.ndarray
    kappas: np.ndarray
    shapes: np.ndarray
    spreads: np.ndarray

    family = "vMFNM"

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        self.kappas = np.atleast_1d(np.asarray(self.kappas, dtype=float))
        self.shapes = np.atleast_1d(np.asarray(self.shapes, dtype=float))
        self.spreads = np.atleast_1d(np.asarray(self.spreads, dtype=float))
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative and sum to one")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            self.directions = self.directions / norms[:, None]
        if np.any(self.kappas < 0) or np.any(self.spreads <= 0) or np.any(self.shapes < SHAPE_MIN):
            raise ValueError("invalid vMFN parameters")

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def log_joint_polar(self, r, a) -> np.ndarray:
        """log(pi_k p_N(r) p_vMF(a)) per component, shape ``(n, K)``."""
        with np.errstate(divide="ignore"):
            out = np.log(self.weights)[None, :] + a @ (self.directions * self.kappas[:, None]).T
        out += log_vmf_normalizer(self.kappas, self.dim)[None, :]
        for k in range(self.K):
            out[:, k] += nakagami_logpdf(r, self.shapes[k], self.spreads[k])
        return out

    def log_joint(self, u) -> np.ndarray:
        r, a = polar(u)
        return self.log_joint_polar(r, a) - (self.dim - 1) * np.log(r)[:, None]

    def logpdf(self, u):
        scalar = np.ndim(u) == 1
        lp = logsumexp(self.log_joint(u), axis=1)
        return float(lp[0]) if scalar else lp

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(self.K, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.K):
            idx = np.flatnonzero(labels == k)
            s, g = self.shapes[k], self.spreads[k]
            r = np.sqrt(rng.gamma(s, g / s, size=idx.size))
            out[idx] = r[:, None] * sample_vmf(self.directions[k], self.kappas[k], idx.size, rng)
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "K": self.K,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "directions": self.directions.ravel().tolist(),
            "kappas": self.kappas.tolist(),
            "shapes": self.shapes.tolist(),
            "spreads": self.spreads.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VMFNMixture":
        return cls(np.array(d["weights"]), np.array(d["directions"]).reshape(d["K"], d["dim"]),
                   np.array(d["kappas"]), np.array(d["shapes"]), np.array(d["spreads"]))


def banerjee_kappa(rbar: float, d: int) -> float:
    return rbar * (d - rbar * rbar) / (1.0 - rbar * rbar)


def kappa_mle(rbar: float, d: int, iters: int = 50) -> float:
    """Solve ``A_d(kappa) = rbar`` by Newton's method from the Banerjee guess."""
    if rbar <= 0.0:
        return 0.0
    kappa = min(banerjee_kappa(rbar, d), KAPPA_MAX)
    for _ in range(iters):
        A = bessel_ratio(d, kappa)
        dA = 1.0 - A * A - (d - 1.0) / kappa * A
        if dA <= 0.0:
            break
        step = (A - rbar) / dA
        new = kappa - step
        if new <= 0.0:
            new = 0.5 * kappa
        if abs(new - kappa) <= 1e-12 * kappa:
            kappa = new
            break
        kappa = new
    return float(np.clip(kappa, 0.0, KAPPA_MAX))


def nakagami_shape_mle(log_gap: float, iters: int = 100) -> float:
    """Solve ``log s - digamma(s) = log_gap`` (Gamma shape MLE for r^2)."""
    if log_gap <= 0.0:
        return SHAPE_MAX
    s = (3.0 - log_gap + np.sqrt((log_gap - 3.0) ** 2 + 24.0 * log_gap)) / (12.0 * log_gap)
    for _ in range(iters):
        f = np.log(s) - digamma(s) - log_gap
        df = 1.0 / s - polygamma(1, s)
        new = s - f / df
        if new <= 0.0:
            new = 0.5 * s
        if abs(new - s) <= 1e-13 * s:
            s = new
            break
        s = new
    return float(np.clip(s, SHAPE_MIN, SHAPE_MAX))


def _m_step(r, a, resp, flags, m_step="mle"):
    J, d = a.shape
    mass = resp.sum(axis=0)
    K = mass.size
    weights = mass / mass.sum()
    dirs = np.empty((K, d))
    kappas = np.empty(K)
    shapes = np.empty(K)
    spreads = np.empty(K)
    r2 = r * r
    logr2 = np.log(r2)
    for k in range(K):
        s_vec = resp[:, k] @ a
        norm_s = np.linalg.norm(s_vec)
        dirs[k] = s_vec / norm_s if norm_s > 0 else np.eye(d)[0]
        rbar = norm_s / mass[k]
        if rbar >= 1.0 - 1e-12:
            kappas[k] = KAPPA_MAX
            flags.add("collapsed-directions")
        elif m_step == "mle":
            kappas[k] = kappa_mle(rbar, d)
        else:
            kappas[k] = min(banerjee_kappa(rbar, d), KAPPA_MAX)
        spreads[k] = resp[:, k] @ r2 / mass[k]
        if m_step == "mle":
            gap = np.log(spreads[k]) - resp[:, k] @ logr2 / mass[k]
            shapes[k] = nakagami_shape_mle(gap)
        else:
            var = resp[:, k] @ (r2 - spreads[k]) ** 2 / mass[k]
            s = spreads[k] ** 2 / var if var > 0 else SHAPE_MAX
            shapes[k] = float(np.clip(s, SHAPE_MIN, SHAPE_MAX))
    return VMFNMixture(weights, dirs, kappas, shapes, spreads), mass


def vmfnm_fit(samples, K: int, tol: float = 1e-6, max_iter: int = 500,
              rng: np.random.Generator | None = None, m_step: str = "mle"):
    """vMFN mixture by EM on the polar decomposition.

    ``m_step="mle"`` maximises the expected log-likelihood exactly (Newton
    solves for ``kappa`` and the Nakagami shape), which keeps EM monotone.
    ``m_step="moment"`` uses the Banerjee approximation for ``kappa`` and the
    moment estimate ``gamma^2 / Var(r^2)`` for the shape.
    """
    if m_step not in ("mle", "moment"):
        raise ValueError(f"unknown m_step {m_step!r}")
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    J, d = x.shape
    if d < 2:
        raise ValueError("vMFNM needs d >= 2")
    if J < 2 * K:
        raise ValueError(f"need at least 2K = {2 * K} samples, got {J}")
    r, a = polar(x)
    rng = rng if rng is not None else np.random.default_rng(0)
    flags: set = set()

    if K == 1:
        resp = np.ones((J, 1))
    else:
        seeds = kmeans_pp_seeds(x, K, rng)
        d2 = ((x[:, None, :] - x[seeds][None, :, :]) ** 2).sum(axis=2)
        resp = np.zeros((J, K))
        resp[np.arange(J), np.argmin(d2, axis=1)] = 1.0
        resp[seeds] = np.eye(K)
    model, mass = _m_step(r, a, resp, flags, m_step)

    history = []
    converged = False
    reseeded = False
    it = 0
    for it in range(1, max_iter + 1):
        lj = model.log_joint_polar(r, a)
        lse = logsumexp(lj, axis=1)
        # Lebesgue log-likelihood; the Jacobian term does not depend on the parameters
        ll = float(lse.sum() - (d - 1) * np.log(r).sum())
        history.append(ll)
        if K == 1 or (len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-1])):
            converged = True
            break
        resp = np.exp(lj - lse[:, None])
        empty = resp.sum(axis=0) < 1e-10
        if empty.any():
            if reseeded:
                raise EMError("mixture component lost all responsibility mass")
            reseeded = True
            flags.add("reseeded")
            worst = np.argsort(lse)[: int(empty.sum())]
            for k, j in zip(np.flatnonzero(empty), worst):
                resp[j] = 0.0
                resp[j, k] = 1.0
            history.clear()
        model, mass = _m_step(r, a, resp, flags, m_step)

    return model, FitReport(it, history[-1], converged, history, mass, sorted(flags))
