"""Desk-scale classification pipeline: train a small softmax ensemble on
synthetic Gaussian blobs, distill it into a single student, and score
prediction quality plus out-of-distribution detection.

Distillation students:

    end        softmax student on the ensemble mean (plain distillation)
    end2_nll   Dirichlet student, NLL of the raw member predictions
    end2_fkl   Dirichlet student, forward KL to a fitted proxy Dirichlet
    end2_rkl   Dirichlet student, reverse KL to the proxy with the +1
               trick applied to both sides

Everything is float64 numpy with hand-written backprop; given a seed the
whole pipeline is bitwise reproducible.  Ensemble members may be trained
in parallel; each member consumes only its own seeded stream, so results
do not depend on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .dirichlet import _entropy, rmi_from_alpha
from .ensemble import clamp_renorm
from .losses import (
    exp_head,
    exp_head_backprop,
    fkl_aggregated_alpha_grad,
    fkl_alpha_grad,
    mean_precision_head,
    mean_precision_head_backprop,
    nll_alpha_grad,
    rkl_alpha_grad,
    softmax,
    temperature_alpha_grad,
)
from .nets import DivergenceError, mlp_backward, mlp_forward, mlp_init, run_training
from .proxy import ProxyConfig, fit_proxy_batch

OOD_INNER_RADIUS = 8.0
OOD_OUTER_RADIUS = 10.0
BLOB_RADIUS = 3.0


class HeadKind(str, Enum):
    SOFTMAX = "softmax"
    DIRICHLET = "dirichlet"
    DIRICHLET_MEAN_PRECISION = "dirichlet_mp"


class DistillMode(str, Enum):
    END = "end"
    END2_NLL = "end2_nll"
    END2_FKL = "end2_fkl"
    END2_RKL = "end2_rkl"


@dataclass(frozen=True)
class SyntheticDataset:
    inputs: np.ndarray
    labels: np.ndarray
    ood_inputs: np.ndarray
    seed: int
    k: int

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


@dataclass
class MlpModel:
    params: dict
    head: HeadKind
    k: int
    loss_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class LossOptions:
    """Forward-KL variants: temperature scaling and tail aggregation."""

    temperature: float = 1.0
    cutoff: int | None = None


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    ece: float
    ood_auc_total: float
    ood_auc_knowledge: float | None
    prr: float


def gen_synthetic(k: int, n_per_class: int, d: int, seed: int) -> SyntheticDataset:
    """K unit-covariance Gaussian blobs on a circle of radius 3, plus OOD
    points drawn uniformly on a shell of radius 8..10.

    In-distribution points are rejection-resampled out of the OOD shell so
    the two sets are disjoint by construction.
    """
    if k < 2 or d < 2:
        raise ValueError("need K >= 2 and D >= 2")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.zeros((k, d))
    centers[:, 0] = BLOB_RADIUS * np.cos(angles)
    centers[:, 1] = BLOB_RADIUS * np.sin(angles)
    labels = np.repeat(np.arange(k), n_per_class)
    inputs = centers[labels] + rng.standard_normal((labels.size, d))
    while True:
        stray = np.linalg.norm(inputs, axis=1) >= OOD_INNER_RADIUS
        if not stray.any():
            break
        inputs[stray] = centers[labels[stray]] + rng.standard_normal((int(stray.sum()), d))
    n_ood = k * n_per_class
    direction = rng.standard_normal((n_ood, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(OOD_INNER_RADIUS, OOD_OUTER_RADIUS, n_ood)
    return SyntheticDataset(inputs=inputs, labels=labels,
                            ood_inputs=direction * radius[:, None], seed=seed, k=k)


# ---------------------------------------------------------------------------
# forward passes

def model_logits(model: MlpModel, x: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(model.params, x)
    return out


def model_alpha(model: MlpModel, x: np.ndarray) -> np.ndarray:
    logits = model_logits(model, x)
    if model.head is HeadKind.DIRICHLET:
        alpha, _ = exp_head(logits)
    elif model.head is HeadKind.DIRICHLET_MEAN_PRECISION:
        alpha, _, _, _ = mean_precision_head(logits[:, :-1], logits[:, -1])
    else:
        raise ValueError("softmax head has no Dirichlet output")
    return alpha


def model_probs(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Predictive categorical: softmax output or the Dirichlet mean."""
    if model.head is HeadKind.SOFTMAX:
        return softmax(model_logits(model, x))
    alpha = model_alpha(model, x)
    return alpha / alpha.sum(axis=1, keepdims=True)


def member_probs(models, x: np.ndarray) -> np.ndarray:
    """Stacked member predictions, shape (N, M, K), clamped rows."""
    stacked = np.stack([model_probs(m, x) for m in models], axis=1)
    return clamp_renorm(stacked)


# ---------------------------------------------------------------------------
# training

def _head_out_dim(head: HeadKind, k: int) -> int:
    return k + 1 if head is HeadKind.DIRICHLET_MEAN_PRECISION else k


def _train_member(data: SyntheticDataset, hidden: int, epochs: int, lr: float,
                  batch_size: int, stream) -> MlpModel:
    rng = np.random.default_rng(stream)
    params = mlp_init(rng, data.inputs.shape[1], hidden, data.k)
    onehot = np.eye(data.k)[data.labels]

    def loss_grad(p, batch):
        x, t = batch
        logits, cache = mlp_forward(p, x)
        probs = softmax(logits)
        value = float(np.mean(-np.sum(t * np.log(clamp_renorm(probs)), axis=1)))
        grads, _ = mlp_backward(p, cache, (probs - t) / x.shape[0])
        return value, grads

    trace = run_training(params, [data.inputs, onehot], loss_grad,
                         epochs=epochs, batch_size=batch_size, lr=lr, rng=rng,
                         what="ensemble member")
    return MlpModel(params=params, head=HeadKind.SOFTMAX, k=data.k, loss_trace=trace)


def train_ensemble(data: SyntheticDataset, m: int, epochs: int = 30, lr: float = 1e-3,
                   seed: int = 0, hidden: int = 32, batch_size: int = 128,
                   threads: int = 1) -> list:
    """M softmax members differing only by their init/shuffle streams."""
    if m < 2:
        raise ValueError("an ensemble needs M >= 2 members")
    streams = [(seed, 0, i) for i in range(m)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(
                lambda s: _train_member(data, hidden, epochs, lr, batch_size, s), streams))
    else:
        members = [_train_member(data, hidden, epochs, lr, batch_size, s) for s in streams]
    for i, member in enumerate(members):
        if member.loss_trace[-1] >= member.loss_trace[0]:
            raise DivergenceError(f"member {i}: loss did not decrease")
    return members


def _student_loss_grad(head: HeadKind, k: int, mode: DistillMode,
                       options: LossOptions):
    """Batched loss+gradient at the student's raw logits.

    Targets are precomputed per item and sliced alongside the inputs:
    the ensemble mean for plain distillation, mean log member probs for
    the Dirichlet NLL, a proxy Dirichlet for the KL modes.
    """

    def softmax_ce(logits, target):
        probs = softmax(logits)
        value = float(np.mean(-np.sum(target * np.log(clamp_renorm(probs)), axis=1)))
        return value, (probs - target) / logits.shape[0]

    def dirichlet_loss(logits, target):
        if head is HeadKind.DIRICHLET:
            alpha, active = exp_head(logits)
        else:
            alpha, pi, active, active0 = mean_precision_head(logits[:, :-1], logits[:, -1])
        if mode is DistillMode.END2_NLL:
            values, grad_alpha = nll_alpha_grad(alpha, target)
        elif mode is DistillMode.END2_FKL:
            if options.cutoff is not None:
                values, grad_alpha = fkl_aggregated_alpha_grad(alpha, target, options.cutoff)
            elif options.temperature != 1.0:
                values, grad_alpha = temperature_alpha_grad(alpha, target, options.temperature)
            else:
                values, grad_alpha = fkl_alpha_grad(alpha, target)
        else:  # reverse KL with the +1 trick on both sides
            values, grad_alpha = rkl_alpha_grad(alpha + 1.0, target + 1.0)
        grad_alpha = grad_alpha / logits.shape[0]
        if head is HeadKind.DIRICHLET:
            d_logits = exp_head_backprop(alpha, active, grad_alpha)
        else:
            d_z, d_z0 = mean_precision_head_backprop(alpha, pi, active, active0, grad_alpha)
            d_logits = np.concatenate([d_z, d_z0[:, None]], axis=1)
        return float(np.mean(values)), d_logits

    return softmax_ce if mode is DistillMode.END else dirichlet_loss


def distill_targets(teachers, inputs: np.ndarray, mode: DistillMode,
                    proxy_cfg: ProxyConfig) -> np.ndarray:
    """Per-item distillation target for the transfer set."""
    members = member_probs(teachers, inputs)
    if mode is DistillMode.END:
        return members.mean(axis=1)
    if mode is DistillMode.END2_NLL:
        return np.log(members).mean(axis=1)
    if mode is DistillMode.END2_FKL:
        return fit_proxy_batch(members, proxy_cfg)
    # reverse KL: the +1 lives inside the loss, so fit the raw proxy here
    return fit_proxy_batch(members, replace(proxy_cfg, plus_one=False))


def distill(teachers, data: SyntheticDataset, mode: DistillMode,
            proxy_cfg: ProxyConfig = ProxyConfig(), epochs: int = 60,
            lr: float = 1e-3, seed: int = 0, hidden: int = 32,
            batch_size: int = 128, student_head: HeadKind | None = None,
            loss_options: LossOptions = LossOptions()) -> MlpModel:
    """Train a student on the teachers' predictions over the training inputs."""
    if not teachers:
        raise ValueError("no teachers given")
    mode = DistillMode(mode)
    if student_head is None:
        student_head = HeadKind.SOFTMAX if mode is DistillMode.END else HeadKind.DIRICHLET
    student_head = HeadKind(student_head)
    if (student_head is HeadKind.SOFTMAX) != (mode is DistillMode.END):
        raise ValueError("plain distillation needs a softmax student; "
                         "distribution distillation needs a Dirichlet head")
    targets = distill_targets(teachers, data.inputs, mode, proxy_cfg)
    rng = np.random.default_rng((seed, 1))
    params = mlp_init(rng, data.inputs.shape[1], hidden, _head_out_dim(student_head, data.k))
    loss_grad_logits = _student_loss_grad(student_head, data.k, mode, loss_options)

    def loss_grad(p, batch):
        x, t = batch
        logits, cache = mlp_forward(p, x)
        value, d_logits = loss_grad_logits(logits, t)
        grads, _ = mlp_backward(p, cache, d_logits)
        return value, grads

    trace = run_training(params, [data.inputs, targets], loss_grad,
                         epochs=epochs, batch_size=batch_size, lr=lr, rng=rng,
                         what=f"distill[{mode.value}]")
    return MlpModel(params=params, head=student_head, k=data.k, loss_trace=trace)


# ---------------------------------------------------------------------------
# metrics

def expected_calibration_error(confidence: np.ndarray, correct: np.ndarray,
                               bins: int = 15) -> float:
    """ECE over equal-width confidence bins."""
    idx = np.minimum((confidence * bins).astype(int), bins - 1)
    ece = 0.0
    n = confidence.size
    for b in range(bins):
        mask = idx == b
        if not mask.any():
            continue
        gap = abs(correct[mask].mean() - confidence[mask].mean())
        ece += (mask.sum() / n) * gap
    return float(ece)


def roc_auc(negative: np.ndarray, positive: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties at half credit."""
    scores = np.concatenate([negative, positive])
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    ranks[order] = np.arange(1, scores.size + 1)
    # average ranks over ties
    sorted_scores = scores[order]
    start = 0
    for i in range(1, scores.size + 1):
        if i == scores.size or sorted_scores[i] != sorted_scores[start]:
            ranks[order[start:i]] = 0.5 * (start + 1 + i)
            start = i
    pos_ranks = ranks[negative.size:]
    u = pos_ranks.sum() - positive.size * (positive.size + 1) / 2.0
    return float(u / (positive.size * negative.size))


def prediction_rejection_ratio(uncertainty: np.ndarray, errors: np.ndarray) -> float:
    """Area between the model's rejection curve and the random baseline,
    normalized by the oracle's area.  1.0 means oracle-grade ranking, 0.0
    means no better than random rejection."""
    n = uncertainty.size
    total_errors = errors.sum()
    if total_errors == 0:
        return 0.0
    frac = np.arange(n + 1) / n

    def retained_error(order):
        rejected = np.concatenate([[0.0], np.cumsum(errors[order])])
        return (total_errors - rejected) / n

    curve_model = retained_error(np.argsort(-uncertainty, kind="stable"))
    curve_oracle = retained_error(np.argsort(-errors, kind="stable"))
    curve_random = (total_errors / n) * (1.0 - frac)
    area_model = np.trapz(curve_random - curve_model, frac)
    area_oracle = np.trapz(curve_random - curve_oracle, frac)
    return float(area_model / area_oracle)


def _uncertainty_scores(model_or_ensemble, x: np.ndarray):
    """(predictive probs, total uncertainty, knowledge uncertainty or None)."""
    if isinstance(model_or_ensemble, (list, tuple)):
        members = member_probs(model_or_ensemble, x)
        mean = members.mean(axis=1)
        total = _entropy(mean)
        mi = total - _entropy(members).mean(axis=1)
        m = members.shape[1]
        logs = np.log(members)
        self_term = np.sum(members * logs, axis=(1, 2))
        cross = np.sum(members.sum(axis=1) * logs.sum(axis=1), axis=-1)
        epkl = (m * self_term - cross) / (m * (m - 1))
        return mean, total, epkl - mi
    model = model_or_ensemble
    if model.head is HeadKind.SOFTMAX:
        probs = clamp_renorm(model_probs(model, x))
        return probs, _entropy(probs), None
    alpha = model_alpha(model, x)
    return alpha / alpha.sum(axis=1, keepdims=True), \
        _entropy(alpha / alpha.sum(axis=1, keepdims=True)), rmi_from_alpha(alpha)


def evaluate(model_or_ensemble, data: SyntheticDataset, ece_bins: int = 15) -> EvalMetrics:
    """Accuracy, calibration, OOD detection and error-rejection quality.

    Total uncertainty is the entropy of the predictive distribution;
    knowledge uncertainty is the reverse mutual information (ensemble
    decomposition or Dirichlet closed form), absent for a single softmax
    model.
    """
    probs, total_id, knowledge_id = _uncertainty_scores(model_or_ensemble, data.inputs)
    pred = probs.argmax(axis=1)
    correct = (pred == data.labels).astype(float)
    _, total_ood, knowledge_ood = _uncertainty_scores(model_or_ensemble, data.ood_inputs)
    auc_knowledge = None
    if knowledge_id is not None:
        auc_knowledge = roc_auc(knowledge_id, knowledge_ood)
    return EvalMetrics(
        accuracy=float(correct.mean()),
        ece=expected_calibration_error(probs.max(axis=1), correct, ece_bins),
        ood_auc_total=roc_auc(total_id, total_ood),
        ood_auc_knowledge=auc_knowledge,
        prr=prediction_rejection_ratio(total_id, 1.0 - correct),
    )
