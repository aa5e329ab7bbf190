"""Limit-state functions and the benchmark registry.

All limit-state functions act on standard normal inputs. ``G(u) <= 0`` marks
failure. Evaluation is vectorised: a single point of shape ``(d,)`` returns a
float, a batch of shape ``(n, d)`` returns an array of shape ``(n,)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.stats import norm

SQRT2 = np.sqrt(2.0)

LOCALIZATION_MODES = ("global", "local", "adaptive")


@dataclass(frozen=True)
class LimitState:
    """A limit-state function ``u -> G(u)`` on ``R^dim``.

    Parameters
    ----------
    name : str
        Registry name.
    dim : int
        Input dimension.
    func : callable
        Batched evaluator mapping an ``(n, dim)`` array to ``(n,)``.
    reference_pf : float, optional
        Known probability of failure, if any.
    recommended_mixtures : int
        Number of mixture components used in the final fit.
    recommended_localization : str
        One of ``"global"``, ``"local"`` or ``"adaptive"``.
    recommended_alpha : float, optional
        Localisation width when ``recommended_localization == "local"``.
    """

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    reference_pf: float | None = None
    recommended_mixtures: int = 1
    recommended_localization: str = "global"
    recommended_alpha: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.reference_pf is not None and not 0.0 < self.reference_pf < 1.0:
            raise ValueError("reference_pf must lie in (0, 1)")
        if self.recommended_localization not in LOCALIZATION_MODES:
            raise ValueError(f"unknown localization {self.recommended_localization!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim or u.ndim not in (1, 2):
            raise ValueError(f"{self.name}: expected input of dimension {self.dim}, got shape {u.shape}")
        if u.ndim == 1:
            return float(self.func(u[None, :])[0])
        return np.asarray(self.func(u), dtype=float)


def eval_lsf(lsf: LimitState, u):
    """Evaluate ``lsf`` at a point or a batch of points."""
    return lsf(u)


def auxiliary_lsf(g):
    """ReLU of the limit-state value, ``max(0, g)``."""
    g = np.asarray(g, dtype=float)
    out = np.maximum(g, 0.0)
    return float(out) if out.ndim == 0 else out


# --- benchmark problems -----------------------------------------------------


def _convex(u):
    u1, u2 = u[:, 0], u[:, 1]
    return 0.1 * (u1 - u2) ** 2 - (u1 + u2) / SQRT2 + 2.5


def _parabolic(u):
    u1, u2 = u[:, 0], u[:, 1]
    return 5.0 - u2 - 0.5 * (u1 - 0.1) ** 2


def _series(u):
    u1, u2 = u[:, 0], u[:, 1]
    quad = 0.1 * (u1 - u2) ** 2
    s = (u1 + u2) / SQRT2
    return np.minimum.reduce([
        quad - s + 3.0,
        quad + s + 3.0,
        u1 - u2 + 7.0 / SQRT2,
        u2 - u1 + 7.0 / SQRT2,
    ])


def convex() -> LimitState:
    return LimitState("convex", 2, _convex, reference_pf=4.21e-3)


def parabolic() -> LimitState:
    return LimitState("parabolic", 2, _parabolic, reference_pf=3.01e-3,
                      recommended_mixtures=2, recommended_localization="local",
                      recommended_alpha=2.0)


def series() -> LimitState:
    return LimitState("series", 2, _series, reference_pf=2.2e-3,
                      recommended_mixtures=4, recommended_localization="local",
                      recommended_alpha=0.25)


# --- affine limit states ----------------------------------------------------


@dataclass(frozen=True)
class AffineLSF:
    """Affine limit state ``G(u) = a.u - b``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if a.ndim != 1 or not np.any(a):
            raise ValueError("a must be a nonzero vector")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.size

    def __call__(self, u):
        return np.asarray(u, dtype=float) @ self.a - self.b

    def as_limit_state(self) -> LimitState:
        a, b = self.a, self.b
        name = "affine(" + ",".join(repr(float(v)) for v in (*a, b)) + ")"
        pf = form_probability(self) if b != 0.0 else 0.5
        return LimitState(name, self.dim, lambda u: u @ a - b, reference_pf=pf)


def mlfp(lsf: AffineLSF) -> np.ndarray:
    """Most likely failure point: the minimum-norm point on ``a.u = b``."""
    return lsf.b / (lsf.a @ lsf.a) * lsf.a


def form_probability(lsf: AffineLSF) -> float:
    """FORM probability ``Phi(-||u*||)``; exact for affine limit states."""
    g0 = -lsf.b
    if g0 == 0.0:
        raise ValueError("origin lies on the failure surface; FORM is degenerate")
    beta = np.linalg.norm(mlfp(lsf))
    p = norm.cdf(-beta)
    return float(p if g0 > 0 else 1.0 - p)


# --- registry ---------------------------------------------------------------

_AFFINE_RE = re.compile(r"^affine\((.*)\)$")


@lru_cache(maxsize=None)
def get_problem(name: str) -> LimitState:
    """Resolve a registry name.

    Accepted names are ``convex``, ``parabolic``, ``series``, ``diffusion1d``
    and ``affine(a1,...,ad,b)``.
    """
    name = name.strip()
    if name == "convex":
        return convex()
    if name == "parabolic":
        return parabolic()
    if name == "series":
        return series()
    if name == "diffusion1d":
        from .diffusion import diffusion_limit_state

        return diffusion_limit_state()
    m = _AFFINE_RE.match(name.replace(" ", ""))
    if m:
        vals = [float(v) for v in m.group(1).split(",") if v]
        if len(vals) < 2:
            raise ValueError(f"affine problem needs at least one coefficient and b: {name!r}")
        return AffineLSF(np.array(vals[:-1]), vals[-1]).as_limit_state()
    raise KeyError(f"unknown problem {name!r}")


PROBLEMS = ("convex", "parabolic", "series", "diffusion1d", "affine(a...,b)")
