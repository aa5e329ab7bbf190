"""Mixture densities used for importance sampling and clustering."""

from __future__ import annotations

import json

import numpy as np

from .bessel import bessel_ratio, log_iv, log_vmf_normalizer
from .gm import EMError, FitReport, GaussianMixture, gm_fit
from .vmfnm import VMFNMixture, nakagami_logpdf, sample_vmf, vmfnm_fit

FAMILIES = ("GM", "vMFNM")

__all__ = [
    "FAMILIES", "EMError", "FitReport", "GaussianMixture", "VMFNMixture",
    "bessel_ratio", "cluster_responsibilities", "fit_mixture", "gm_fit",
    "log_iv", "log_std_normal", "log_vmf_normalizer", "mixture_logweight",
    "model_from_dict", "model_from_json", "model_to_json", "nakagami_logpdf",
    "sample_vmf", "vmfnm_fit",
]


def fit_mixture(family: str, samples, K: int, rng=None, **kwargs):
    """Fit a ``"GM"`` or ``"vMFNM"`` mixture; returns ``(model, report)``."""
    if family == "GM":
        return gm_fit(samples, K, rng=rng, **kwargs)
    if family == "vMFNM":
        return vmfnm_fit(samples, K, rng=rng, **kwargs)
    raise ValueError(f"unknown mixture family {family!r}")


def log_std_normal(u):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    d = u.shape[1]
    return -0.5 * d * np.log(2.0 * np.pi) - 0.5 * np.sum(u * u, axis=1)


def mixture_logweight(model, u):
    """log of the importance weight ``phi_d(u) / p(u)``."""
    scalar = np.ndim(u) == 1
    lw = log_std_normal(u) - np.atleast_1d(model.logpdf(np.atleast_2d(u)))
    return float(lw[0]) if scalar else lw


def cluster_responsibilities(model, samples) -> np.ndarray:
    """Hard cluster labels by maximum posterior responsibility (lowest index on ties)."""
    return np.argmax(model.log_joint(samples), axis=1)


def model_from_dict(d: dict):
    family = d.get("family")
    if family == "GM":
        return GaussianMixture.from_dict(d)
    if family == "vMFNM":
        return VMFNMixture.from_dict(d)
    raise ValueError(f"unknown mixture family {family!r}")


def model_to_json(model) -> str:
    return json.dumps(model.to_dict())


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
