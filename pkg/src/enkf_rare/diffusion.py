"""1D diffusion problem with a log-normal coefficient.

The coefficient ``a = exp(Z_d)`` comes from a truncated Karhunen-Loeve
expansion of a Gaussian field with exponential covariance on (0, 1). The
equation ``-(a y')' = 1`` is solved with piecewise-linear finite elements,
``y(0) = 0`` and zero flux at ``x = 1``. Failure means ``y_h(1) > threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .lsf import LimitState


def _even_residual(w, c):
    # c = w tan(w/2), multiplied through by cos(w/2) to remove the poles
    return c * np.cos(0.5 * w) - w * np.sin(0.5 * w)


def _odd_residual(w, c):
    # w = -c tan(w/2)
    return w * np.cos(0.5 * w) + c * np.sin(0.5 * w)


def kl_frequencies(corr_length: float, n_terms: int, xtol: float = 1e-12):
    """Frequencies of the KL modes of ``exp(-|x-y|/corr_length)`` on (0, 1).

    Mode ``m`` (1-based) has its frequency in ``((m-1) pi, m pi)``; odd ``m``
    are cosine modes and even ``m`` are sine modes about ``x = 1/2``.

    Returns
    -------
    w : ndarray, shape (n_terms,)
    is_even : ndarray of bool, shape (n_terms,)
    """
    if corr_length <= 0 or n_terms < 1:
        raise ValueError("need corr_length > 0 and n_terms >= 1")
    c = 1.0 / corr_length
    w = np.empty(n_terms)
    is_even = np.zeros(n_terms, dtype=bool)
    for m in range(1, n_terms + 1):
        lo, hi = (m - 1) * np.pi, m * np.pi
        f = _even_residual if m % 2 else _odd_residual
        flo, fhi = f(lo, c), f(hi, c)
        if m == 1:
            # at w = 0 the even residual equals c > 0; root is interior
            lo = 0.0
        if np.sign(flo) == np.sign(fhi):
            raise RuntimeError(f"KL root bracket for mode {m} not found in ({lo}, {hi})")
        w[m - 1] = brentq(f, lo, hi, args=(c,), xtol=xtol, rtol=1e-15, maxiter=500)
        is_even[m - 1] = bool(m % 2)
    return w, is_even


def kl_eigenfunctions(w, is_even, x) -> np.ndarray:
    """L2(0,1)-normalised eigenfunctions evaluated at ``x``; shape (len(w), len(x))."""
    w = np.asarray(w)[:, None]
    s = (np.asarray(x, dtype=float) - 0.5)[None, :]
    even = np.asarray(is_even)[:, None]
    sinw_over = np.sin(w) / (2.0 * w)
    norm_even = np.sqrt(0.5 + sinw_over)
    norm_odd = np.sqrt(0.5 - sinw_over)
    return np.where(even, np.cos(w * s) / norm_even, np.sin(w * s) / norm_odd)


def kl_eigenpairs(corr_length: float, n_terms: int, x):
    """Eigenvalues (descending) and eigenfunction values at ``x``.

    Eigenvalues belong to the unit-variance kernel ``exp(-|x-y|/corr_length)``.
    """
    w, is_even = kl_frequencies(corr_length, n_terms)
    c = 1.0 / corr_length
    nu = 2.0 * c / (w**2 + c**2)
    order = np.argsort(-nu, kind="stable")
    return nu[order], kl_eigenfunctions(w[order], is_even[order], x)


def thomas_solve(lower, diag, upper, rhs):
    """Solve a batch of tridiagonal systems along axis 0.

    ``lower[i]`` couples row ``i`` to ``i-1`` (``lower[0]`` unused), ``upper[i]``
    couples row ``i`` to ``i+1`` (``upper[-1]`` unused). Trailing axes are batch
    axes. No pivoting; intended for symmetric positive definite systems.
    """
    n = diag.shape[0]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs, dtype=float)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    x = np.empty_like(dp)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@dataclass
class DiffusionProblem:
    """Precomputed KL expansion and FEM mesh for the 1D diffusion problem."""

    kl_terms: int = 150
    mesh_elements: int = 512
    corr_length: float = 0.01
    field_mean: float = 1.0
    field_std: float = 0.1
    threshold: float = 0.535
    nu: np.ndarray = field(init=False, repr=False)
    theta_nodes: np.ndarray = field(init=False, repr=False)
    theta_mid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nu, self.theta_nodes = kl_eigenpairs(self.corr_length, self.kl_terms, self.nodes)
        _, self.theta_mid = kl_eigenpairs(self.corr_length, self.kl_terms, self.midpoints)
        # rows scaled once so that Z = mu + u @ _field_map
        self._field_map = self.sigma_z * np.sqrt(self.nu)[:, None] * self.theta_mid

    @property
    def sigma_z2(self) -> float:
        return float(np.log((self.field_std**2 + self.field_mean**2) / self.field_mean**2))

    @property
    def sigma_z(self) -> float:
        return float(np.sqrt(self.sigma_z2))

    @property
    def mu_z(self) -> float:
        return float(np.log(self.field_mean) - 0.5 * self.sigma_z2)

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.mesh_elements + 1)

    @cached_property
    def midpoints(self) -> np.ndarray:
        x = self.nodes
        return 0.5 * (x[:-1] + x[1:])

    @property
    def h(self) -> float:
        return 1.0 / self.mesh_elements

    def log_field(self, u) -> np.ndarray:
        """``Z_d`` at the element midpoints; shape ``(n, mesh_elements)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[1] != self.kl_terms:
            raise ValueError(f"expected {self.kl_terms} KL coefficients, got {u.shape[1]}")
        return self.mu_z + u @ self._field_map

    def coefficient(self, u) -> np.ndarray:
        z = self.log_field(u)
        a = np.exp(z)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite diffusion coefficient")
        return a

    def solve_coefficient(self, a) -> np.ndarray:
        """FEM nodal solution for element coefficients ``a`` of shape (n, ne).

        Returns nodal values at nodes 1..ne (node 0 carries the Dirichlet
        value 0); shape ``(ne, n)``.
        """
        a = np.atleast_2d(a).T  # (ne, n): element index first for the sweep
        h = 1.0 / a.shape[0]
        diag = np.empty_like(a)
        diag[:-1] = (a[:-1] + a[1:]) / h
        diag[-1] = a[-1] / h
        off = -a[1:] / h
        lower = np.vstack([np.zeros((1, a.shape[1])), off])
        upper = np.vstack([off, np.zeros((1, a.shape[1]))])
        rhs = np.full_like(a, h)
        rhs[-1] = 0.5 * h
        return thomas_solve(lower, diag, upper, rhs)

    def solve(self, u) -> np.ndarray:
        """``y_h(1)`` for each row of ``u``."""
        return self.solve_coefficient(self.coefficient(u))[-1]

    def __call__(self, u) -> np.ndarray:
        return self.threshold - self.solve(u)


_DEFAULT_PROBLEM: DiffusionProblem | None = None


def default_problem() -> DiffusionProblem:
    global _DEFAULT_PROBLEM
    if _DEFAULT_PROBLEM is None:
        _DEFAULT_PROBLEM = DiffusionProblem()
    return _DEFAULT_PROBLEM


def solve_diffusion(problem: DiffusionProblem, u):
    """``y_h(1)`` for one KL coefficient vector or a batch."""
    y = problem.solve(u)
    return float(y[0]) if np.ndim(u) == 1 else y


def diffusion_limit_state(problem: DiffusionProblem | None = None) -> LimitState:
    problem = problem or default_problem()
    return LimitState("diffusion1d", problem.kl_terms, problem, reference_pf=1.682e-4)
