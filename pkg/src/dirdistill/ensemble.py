"""Uncertainty measures computed from an ensemble's categorical outputs.

An `EnsembleSlice` holds the M member predictions for a single input (or a
single decoding step): an M x K row-stochastic matrix.  Rows are clamped
to CLAMP_FLOOR and renormalized at construction, so every log taken
downstream is finite; confident members drive tail probabilities below
float underflow otherwise.

Measures:

    ens_mean    columnwise mean, the predictive posterior
    MI          H[mean] - mean of row entropies
    ens_epkl    mean categorical KL over ordered member pairs (m != j)
    ens_mkl     mean categorical KL from the ensemble mean to each member
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dirichlet import ProbVector, UncertaintyReport, _entropy

CLAMP_FLOOR = 1e-10


def clamp_renorm(probs: np.ndarray) -> np.ndarray:
    """Clamp probabilities to the floor and renormalize over the last axis."""
    p = np.maximum(probs, CLAMP_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class EnsembleSlice:
    """M x K member predictions for one input/context.

    Pairwise diversity measures need M >= 2 and raise below that; M = 1
    pseudo-slices are allowed so a bare target distribution can feed the
    Dirichlet NLL loss.
    """

    members: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
            raise ValueError("members must be an M x K matrix with K >= 2")
        if not np.all(np.isfinite(m)) or np.any(m < 0.0):
            raise ValueError("member probabilities must be finite and non-negative")
        sums = m.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("every member row must sum to 1")
        m = clamp_renorm(m)
        m.flags.writeable = False
        object.__setattr__(self, "members", m)

    @property
    def m(self) -> int:
        return self.members.shape[0]

    @property
    def k(self) -> int:
        return self.members.shape[1]


def slice_mean(members: np.ndarray) -> np.ndarray:
    return members.mean(axis=0)


def slice_epkl(members: np.ndarray) -> float:
    """Mean pairwise categorical KL over ordered pairs, divisor M(M-1).

    Uses the expansion sum_{m != j} KL(m||j)
        = M * sum_m sum_k pi^m ln pi^m - sum_k (sum_m pi^m_k)(sum_j ln pi^j_k),
    which avoids forming the M x M pair matrix.
    """
    m = members.shape[0]
    logs = np.log(members)
    self_term = float(np.sum(members * logs))
    cross = float(np.sum(members.sum(axis=0) * logs.sum(axis=0)))
    return (m * self_term - cross) / (m * (m - 1))


def slice_mkl(members: np.ndarray) -> float:
    mean = members.mean(axis=0)
    return float(np.mean(np.sum(mean * (np.log(mean) - np.log(members)), axis=1)))


def ens_mean(s: EnsembleSlice) -> ProbVector:
    """Columnwise mean of the member predictions (predictive posterior)."""
    return ProbVector(slice_mean(s.members))


def ens_epkl(s: EnsembleSlice) -> float:
    """Expected pairwise KL divergence between members; >= 0."""
    if s.m < 2:
        raise ValueError("pairwise KL needs at least two members")
    return slice_epkl(s.members)


def ens_mkl(s: EnsembleSlice) -> float:
    """Mean KL from the ensemble mean to each member; >= 0."""
    if s.m < 2:
        raise ValueError("mean-to-member KL needs at least two members")
    return slice_mkl(s.members)


def ens_report(s: EnsembleSlice) -> UncertaintyReport:
    """Total/data/knowledge decomposition plus EPKL, RMI and the SCR score."""
    if s.m < 2:
        raise ValueError("uncertainty decomposition needs at least two members")
    mean = slice_mean(s.members)
    total = float(_entropy(mean))
    expected_data = float(np.mean(_entropy(s.members)))
    mi = total - expected_data
    epkl = slice_epkl(s.members)
    return UncertaintyReport(
        total_uncertainty=total,
        expected_data_uncertainty=expected_data,
        mutual_info=mi,
        epkl=epkl,
        rmi=epkl - mi,
        score_max_logprob=float(np.log(mean.max())),
    )
