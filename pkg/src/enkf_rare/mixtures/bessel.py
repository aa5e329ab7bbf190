"""Log-space modified Bessel functions of the first kind.

``log I_nu(x)`` has to stay finite for concentrations around 1e5 at orders
near 74 (d = 150), where ``I_nu`` itself overflows, and for tiny ``x`` at high
order, where it underflows.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, ive

_SERIES_MARGIN = 10.0
_DEBYE_MIN_ORDER = 40.0
_MAX_SERIES_TERMS = 2000


def _log_series_sum(nu, x):
    """log of sum_k (x^2/4)^k / (k! (nu+1)_k), the normalised power series."""
    q = 0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, _MAX_SERIES_TERMS):
        term = np.where(active, term * q / (k * (nu + k)), 0.0)
        total = total + term
        active = term > 1e-17 * total
        if not active.any():
            break
    return np.log(total)


def _debye(nu, x):
    # uniform asymptotic expansion in 1/nu, terms through u_5
    z = x / nu
    sq = np.sqrt(1.0 + z * z)
    p = 1.0 / sq
    eta = sq + np.log(z / (1.0 + sq))
    p2 = p * p
    u1 = p * (3.0 - 5.0 * p2) / 24.0
    u2 = p2 * (81.0 - 462.0 * p2 + 385.0 * p2**2) / 1152.0
    u3 = p * p2 * (30375.0 - 369603.0 * p2 + 765765.0 * p2**2 - 425425.0 * p2**3) / 414720.0
    u4 = p2**2 * (4465125.0 - 94121676.0 * p2 + 349922430.0 * p2**2
                  - 446185740.0 * p2**3 + 185910725.0 * p2**4) / 39813120.0
    u5 = p * p2**2 * (1519035525.0 - 49286948607.0 * p2 + 284499769554.0 * p2**2
                      - 614135872350.0 * p2**3 + 566098157625.0 * p2**4
                      - 188699385875.0 * p2**5) / 6688604160.0
    inv = 1.0 / nu
    corr = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * (u4 + inv * u5))))
    return nu * eta - 0.5 * np.log(2.0 * np.pi * nu) + 0.5 * np.log(p) + np.log(corr)


def log_iv(nu, x):
    """``log I_nu(x)`` for ``nu >= 0`` and ``x >= 0``.

    Power series for ``x < nu + 10``; for larger arguments the exponentially
    scaled ``ive`` at moderate order and the uniform asymptotic expansion at
    order ``>= 40``.
    """
    nu_b, x_b = np.broadcast_arrays(np.asarray(nu, dtype=float), np.asarray(x, dtype=float))
    nu_b, x_b = nu_b.ravel(), x_b.ravel()
    out = np.empty_like(x_b)

    small = x_b < nu_b + _SERIES_MARGIN
    if small.any():
        n, xs = nu_b[small], x_b[small]
        with np.errstate(divide="ignore"):
            lead = n * np.log(0.5 * xs) - gammaln(n + 1.0)
        lead = np.where(xs == 0.0, np.where(n == 0.0, 0.0, -np.inf), lead)
        out[small] = lead + _log_series_sum(n, xs)

    debye = ~small & (nu_b >= _DEBYE_MIN_ORDER)
    if debye.any():
        out[debye] = _debye(nu_b[debye], x_b[debye])

    rest = ~small & ~debye
    if rest.any():
        out[rest] = np.log(ive(nu_b[rest], x_b[rest])) + x_b[rest]

    out = out.reshape(np.broadcast(np.asarray(nu), np.asarray(x)).shape)
    return float(out) if out.ndim == 0 else out


def log_vmf_normalizer(kappa, d: int):
    """log C_d(kappa) for the von Mises-Fisher density on S^{d-1}.

    Finite at ``kappa = 0``, where it equals minus the log surface area.
    """
    kappa = np.asarray(kappa, dtype=float)
    nu = 0.5 * d - 1.0
    base = -0.5 * d * np.log(2.0 * np.pi)
    k = np.atleast_1d(kappa).ravel()
    out = np.empty_like(k)
    small = k < nu + _SERIES_MARGIN
    if small.any():
        # kappa^nu / I_nu(kappa) = 2^nu Gamma(nu+1) / series
        ks = k[small]
        out[small] = base + nu * np.log(2.0) + gammaln(nu + 1.0) - _log_series_sum(np.full_like(ks, nu), ks)
    if (~small).any():
        kl = k[~small]
        out[~small] = base + nu * np.log(kl) - log_iv(nu, kl)
    out = out.reshape(kappa.shape)
    return float(out) if out.ndim == 0 else out


def bessel_ratio(d: int, kappa):
    """Mean resultant length ``A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)``."""
    kappa = np.asarray(kappa, dtype=float)
    nu = 0.5 * d - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.exp(log_iv(nu + 1.0, kappa) - log_iv(nu, kappa))
    r = np.where(kappa == 0.0, 0.0, r)
    return float(r) if r.ndim == 0 else r
