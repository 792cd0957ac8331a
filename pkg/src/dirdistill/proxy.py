"""Fit a proxy Dirichlet target to an ensemble slice.

The proxy keeps the ensemble mean exactly and matches its dispersion
through the precision: inverting the closed form EPKL = (K-1)/beta0 gives

    beta0 = (K-1) / EPKL        (EPKL_BASED)
    beta0 = (K-1) / (2 * MKL)   (MKL_BASED)

The MKL-based estimate coincides with the classic Stirling-approximation
precision estimate written in terms of mean log-probabilities:
2 * MKL = 2 * sum_k mean_k * (ln mean_k - meanlog_k).

An optional +1 is added to the concentrations after the mean * precision
product; it smooths the target away from the digamma singularities at the
cost of a slight mean shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dirichlet import DirichletParams
from .ensemble import EnsembleSlice, slice_epkl, slice_mean, slice_mkl

DEGENERATE_DENOM = 1e-12


class PrecisionEstimator(str, Enum):
    EPKL_BASED = "epkl"
    MKL_BASED = "mkl"


@dataclass(frozen=True)
class ProxyConfig:
    estimator: PrecisionEstimator = PrecisionEstimator.MKL_BASED
    plus_one: bool = True
    beta0_cap: float = 1e6
    beta0_floor: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.beta0_floor < self.beta0_cap:
            raise ValueError("need 0 < beta0_floor < beta0_cap")


def estimate_beta0(s: EnsembleSlice, cfg: ProxyConfig) -> float:
    """Precision estimate, clamped to [beta0_floor, beta0_cap].

    A fully agreeing ensemble drives the divergence denominator to zero;
    that is reported as the cap rather than an error so distillation of
    confident teachers keeps running.  A single-member slice carries no
    diversity information and takes the same degenerate path.
    """
    if s.m < 2:
        return cfg.beta0_cap
    if cfg.estimator is PrecisionEstimator.EPKL_BASED:
        denom = slice_epkl(s.members)
    else:
        denom = 2.0 * slice_mkl(s.members)
    if denom <= DEGENERATE_DENOM:
        return cfg.beta0_cap
    beta0 = (s.k - 1.0) / denom
    return float(min(max(beta0, cfg.beta0_floor), cfg.beta0_cap))


def fit_proxy(s: EnsembleSlice, cfg: ProxyConfig = ProxyConfig()) -> DirichletParams:
    """Proxy-Dirichlet target beta = mean * beta0 (+1 when configured)."""
    beta = slice_mean(s.members) * estimate_beta0(s, cfg)
    if cfg.plus_one:
        beta = beta + 1.0
    return DirichletParams(beta)


def fit_proxy_batch(members: np.ndarray, cfg: ProxyConfig = ProxyConfig()) -> np.ndarray:
    """Vectorized fit over a stack of slices.

    `members` is (N, M, K) with rows already clamped and renormalized (see
    `ensemble.clamp_renorm`); returns beta shaped (N, K).  Semantics match
    `fit_proxy` record by record.
    """
    n, m, k = members.shape
    mean = members.mean(axis=1)
    logs = np.log(members)
    if m < 2:
        denom = np.zeros(n)
    elif cfg.estimator is PrecisionEstimator.EPKL_BASED:
        self_term = np.sum(members * logs, axis=(1, 2))
        cross = np.sum(members.sum(axis=1) * logs.sum(axis=1), axis=-1)
        denom = (m * self_term - cross) / (m * (m - 1))
    else:
        meanlog = logs.mean(axis=1)
        denom = 2.0 * np.sum(mean * (np.log(mean) - meanlog), axis=-1)
    degenerate = denom <= DEGENERATE_DENOM
    beta0 = np.where(
        degenerate,
        cfg.beta0_cap,
        np.clip((k - 1.0) / np.where(degenerate, 1.0, denom), cfg.beta0_floor, cfg.beta0_cap),
    )
    beta = mean * beta0[:, None]
    if cfg.plus_one:
        beta = beta + 1.0
    return beta
