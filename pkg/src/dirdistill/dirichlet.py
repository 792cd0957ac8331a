"""Dirichlet distributions: density, closed-form uncertainty measures, KL.

A Dirichlet with concentrations alpha (alpha_k > 0, alpha0 = sum alpha)
induces a predictive categorical pi_hat = alpha / alpha0.  The measures
implemented here are the closed forms of the standard decomposition

    total uncertainty   H[pi_hat]
    mutual information  MI  = H[pi_hat] - E[H[pi]]
    EPKL                (K - 1) / alpha0
    RMI                 EPKL - MI

together with the differential entropy and the Dirichlet-Dirichlet KL
divergence.  Everything is computed in the log-gamma domain; products of
Gamma values are never formed.  Entropy terms use the 0*ln 0 = 0
convention.

The `*_from_alpha` functions are the vectorized core: they accept arrays
of shape (..., K) and reduce over the trailing axis, which is what the
training pipelines batch over.  The `dir_*` functions are the scalar
wrappers operating on `DirichletParams`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import digamma, lgamma

PROB_SUM_TOL = 1e-6
ALPHA0_REL_TOL = 1e-9


def _entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy over the last axis, 0*ln 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -np.sum(plogp, axis=-1)


@dataclass(frozen=True)
class ProbVector:
    """A point on the K-simplex (one categorical distribution)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("probability vector must be 1-D with K >= 2")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0):
            raise ValueError("probabilities must be finite and non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        p = p / total
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class DirichletParams:
    """Concentration vector alpha with cached precision alpha0.

    Used both for model outputs (alpha) and for proxy targets (beta); the
    two differ only in role.
    """

    alpha: np.ndarray
    alpha0: float = None  # type: ignore[assignment]

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("alpha must be 1-D with K >= 2")
        if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
            raise ValueError("alpha entries must be finite and strictly positive")
        total = float(a.sum())
        if self.alpha0 is not None and abs(self.alpha0 - total) > ALPHA0_REL_TOL * total:
            raise ValueError("cached alpha0 disagrees with sum(alpha)")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "alpha0", total)

    @property
    def k(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class UncertaintyReport:
    """Named scalar uncertainty measures for one prediction, in nats."""

    total_uncertainty: float
    expected_data_uncertainty: float
    mutual_info: float
    epkl: float
    rmi: float
    score_max_logprob: float | None = None

    def __post_init__(self):
        gap = self.mutual_info - (self.total_uncertainty - self.expected_data_uncertainty)
        if abs(gap) > 1e-10:
            raise ValueError("mutual_info must equal total - expected_data uncertainty")
        if self.mutual_info < -1e-10:
            raise ValueError("mutual_info must be non-negative")
        if self.epkl < self.mutual_info - 1e-10:
            raise ValueError("epkl must dominate mutual_info")


# ---------------------------------------------------------------------------
# vectorized core, alpha shaped (..., K)

def mean_from_alpha(alpha: np.ndarray) -> np.ndarray:
    return alpha / np.sum(alpha, axis=-1, keepdims=True)


def total_uncertainty_from_alpha(alpha: np.ndarray) -> np.ndarray:
    return _entropy(mean_from_alpha(alpha))


def mutual_info_from_alpha(alpha: np.ndarray) -> np.ndarray:
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    p = alpha / a0
    inner = np.log(p) - digamma(alpha + 1.0) + digamma(a0 + 1.0)
    return -np.sum(p * inner, axis=-1)


def epkl_from_alpha(alpha: np.ndarray) -> np.ndarray:
    k = alpha.shape[-1]
    return (k - 1.0) / np.sum(alpha, axis=-1)


def rmi_from_alpha(alpha: np.ndarray) -> np.ndarray:
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    p = alpha / a0
    inner = np.log(p) - digamma(alpha) + digamma(a0)
    return np.sum(p * inner, axis=-1)


def diff_entropy_from_alpha(alpha: np.ndarray) -> np.ndarray:
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    out = np.sum(lgamma(alpha), axis=-1) - np.squeeze(lgamma(a0), axis=-1)
    out -= np.sum((alpha - 1.0) * (digamma(alpha) - digamma(a0)), axis=-1)
    return out


def log_pdf_from_alpha(alpha: np.ndarray, pi: np.ndarray) -> np.ndarray:
    a0 = np.sum(alpha, axis=-1)
    log_norm = lgamma(a0) - np.sum(lgamma(alpha), axis=-1)
    return log_norm + np.sum((alpha - 1.0) * np.log(pi), axis=-1)


def kl_from_alpha(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """KL[Dir(a) || Dir(b)] over the trailing axis."""
    a0 = np.sum(a, axis=-1, keepdims=True)
    b0 = np.sum(b, axis=-1, keepdims=True)
    out = np.squeeze(lgamma(a0) - lgamma(b0), axis=-1)
    out -= np.sum(lgamma(a) - lgamma(b), axis=-1)
    out += np.sum((a - b) * (digamma(a) - digamma(a0)), axis=-1)
    return out


# ---------------------------------------------------------------------------
# spec surface

def dir_log_pdf(d: DirichletParams, pi: ProbVector) -> float:
    """Log density of the Dirichlet at an interior simplex point."""
    if pi.k != d.k:
        raise ValueError("dimension mismatch")
    if np.any(pi.probs <= 0.0):
        raise ValueError("log density requires strictly positive probabilities")
    return float(log_pdf_from_alpha(d.alpha, pi.probs))


def dir_mean(d: DirichletParams) -> ProbVector:
    """Expected categorical distribution alpha / alpha0."""
    return ProbVector(d.alpha / d.alpha0)


def dir_diff_entropy(d: DirichletParams) -> float:
    return float(diff_entropy_from_alpha(d.alpha))


def dir_total_uncertainty(d: DirichletParams) -> float:
    """Entropy of the predictive (mean) categorical."""
    return float(total_uncertainty_from_alpha(d.alpha))


def dir_mutual_info(d: DirichletParams) -> float:
    """Mutual information between the label and the sampled categorical."""
    return float(mutual_info_from_alpha(d.alpha))


def dir_epkl(d: DirichletParams) -> float:
    """Expected pairwise KL between categoricals drawn from the Dirichlet."""
    return float(epkl_from_alpha(d.alpha))


def dir_rmi(d: DirichletParams) -> float:
    """Reverse mutual information; equals EPKL - MI, always >= 0."""
    return float(rmi_from_alpha(d.alpha))


def dir_kl(p: DirichletParams, q: DirichletParams) -> float:
    """KL divergence KL[Dir(p) || Dir(q)], computed in the log-gamma domain."""
    if p.k != q.k:
        raise ValueError("dimension mismatch")
    return float(kl_from_alpha(p.alpha, q.alpha))


def dir_report(d: DirichletParams) -> UncertaintyReport:
    """All closed-form uncertainty measures for one Dirichlet prediction."""
    total = dir_total_uncertainty(d)
    mi = dir_mutual_info(d)
    mean = d.alpha / d.alpha0
    return UncertaintyReport(
        total_uncertainty=total,
        expected_data_uncertainty=total - mi,
        mutual_info=mi,
        epkl=dir_epkl(d),
        rmi=dir_rmi(d),
        score_max_logprob=float(np.log(mean.max())),
    )
