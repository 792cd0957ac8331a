"""Distillation objectives over Dirichlet outputs and their exact gradients.

Naming convention, fixed here because the literature is inconsistent:

    forward KL   KL[proxy || model]   (mass-covering, target on the left)
    reverse KL   KL[model || proxy]   (zero-forcing, model on the left)

Gradients are taken with respect to the Dirichlet logits.  In the standard
parameterization alpha = exp(z), so every gradient in alpha-space is
chain-ruled by a trailing elementwise factor alpha.  The `*_alpha_grad`
functions are the batched cores returning (value, d value / d alpha) over
arrays shaped (..., K); the spec-level functions wrap the 1-D case and
produce logit gradients.

The +1 wrapper evaluates a KL loss at (alpha+1, beta+1) while keeping the
Jacobian d(alpha_k + 1)/d z_k = alpha_k, which bounds the digamma and
trigamma arguments away from the highly non-linear region below 1.

Logits are clamped to [-30, 30] (precision logit to [-30, 14]) before
exponentiation, keeping concentrations inside the comfortable range of
double-precision log-gamma; clamped coordinates get zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dirichlet import DirichletParams, ProbVector, kl_from_alpha
from .ensemble import EnsembleSlice
from .special import digamma, lgamma, trigamma

LOGIT_CLAMP = 30.0
PRECISION_LOGIT_MAX = 14.0


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    grad_z: np.ndarray
    grad_z0: float | None = None


# ---------------------------------------------------------------------------
# batched cores: value plus gradient with respect to alpha

def soft_ce_alpha_grad(alpha: np.ndarray, target: np.ndarray):
    """Cross-entropy between the Dirichlet mean and a target categorical."""
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    value = -np.sum(target * (np.log(alpha) - np.log(a0)), axis=-1)
    grad = -target / alpha + 1.0 / a0
    return value, grad


def nll_alpha_grad(alpha: np.ndarray, meanlog: np.ndarray):
    """Dirichlet negative log-likelihood of member samples.

    `meanlog` is the per-class mean of log member probabilities; the value
    equals minus the mean member log-density under Dir(alpha).
    """
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    value = np.sum(lgamma(alpha) - (alpha - 1.0) * meanlog, axis=-1)
    value -= np.squeeze(lgamma(a0), axis=-1)
    grad = digamma(alpha) - digamma(a0) - meanlog
    return value, grad


def fkl_alpha_grad(alpha: np.ndarray, beta: np.ndarray):
    """KL[Dir(beta) || Dir(alpha)] and its alpha-gradient."""
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    b0 = np.sum(beta, axis=-1, keepdims=True)
    value = kl_from_alpha(beta, alpha)
    grad = digamma(alpha) - digamma(a0) - digamma(beta) + digamma(b0)
    return value, grad


def rkl_alpha_grad(alpha: np.ndarray, beta: np.ndarray):
    """KL[Dir(alpha) || Dir(beta)] and its alpha-gradient."""
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    b0 = np.sum(beta, axis=-1, keepdims=True)
    value = kl_from_alpha(alpha, beta)
    grad = (alpha - beta) * trigamma(alpha) - (a0 - b0) * trigamma(a0)
    return value, grad


def fkl_aggregated_alpha_grad(alpha: np.ndarray, beta: np.ndarray, cutoff: int):
    """Forward KL with the proxy's low-mass tail merged into one class.

    Per item, classes are ordered by descending beta; the first `cutoff`
    stay separate while the rest are summed into a single aggregate class
    on both sides.  The aggregate gradient is shared by every merged class
    (the chain rule through the sum contributes a factor of one per class).
    """
    k = alpha.shape[-1]
    if not 1 <= cutoff < k:
        raise ValueError("cutoff must satisfy 1 <= cutoff < K")
    order = np.argsort(-beta, axis=-1, kind="stable")
    a_sorted = np.take_along_axis(alpha, order, axis=-1)
    b_sorted = np.take_along_axis(beta, order, axis=-1)
    a_red = np.concatenate(
        [a_sorted[..., :cutoff], a_sorted[..., cutoff:].sum(axis=-1, keepdims=True)], axis=-1)
    b_red = np.concatenate(
        [b_sorted[..., :cutoff], b_sorted[..., cutoff:].sum(axis=-1, keepdims=True)], axis=-1)
    value, grad_red = fkl_alpha_grad(a_red, b_red)
    grad_sorted = np.concatenate(
        [grad_red[..., :cutoff],
         np.broadcast_to(grad_red[..., cutoff:], a_sorted[..., cutoff:].shape)], axis=-1)
    grad = np.empty_like(alpha)
    np.put_along_axis(grad, order, grad_sorted, axis=-1)
    return value, grad


def temperature_alpha_grad(alpha: np.ndarray, beta: np.ndarray, t: float, approx: bool = False):
    """Temperature-scaled forward KL: value T * KL[Dir(beta/T) || Dir(alpha/T)].

    The exact alpha-gradient is psi(a/T) - psi(a0/T) - psi(b/T) + psi(b0/T);
    with approx=True the first-order large-concentration expansion
    ln(mean_a/mean_b) - (T/2) * ((a0-a)/(a a0) - (b0-b)/(b b0)) is returned
    instead (the value stays exact).
    """
    if t <= 0.0:
        raise ValueError("temperature must be positive")
    a0 = np.sum(alpha, axis=-1, keepdims=True)
    b0 = np.sum(beta, axis=-1, keepdims=True)
    value = t * kl_from_alpha(beta / t, alpha / t)
    if approx:
        grad = np.log(alpha / a0) - np.log(beta / b0)
        grad -= (t / 2.0) * ((a0 - alpha) / (alpha * a0) - (b0 - beta) / (beta * b0))
    else:
        grad = digamma(alpha / t) - digamma(a0 / t)
        grad -= digamma(beta / t) - digamma(b0 / t)
    return value, grad


# ---------------------------------------------------------------------------
# output heads (batched; trailing axis is the class axis)

def exp_head(z: np.ndarray):
    """Standard parameterization alpha = exp(clamp(z))."""
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    alpha = np.exp(zc)
    active = (z > -LOGIT_CLAMP) & (z < LOGIT_CLAMP)
    return alpha, active


def exp_head_backprop(alpha: np.ndarray, active: np.ndarray, grad_alpha: np.ndarray):
    return np.where(active, grad_alpha * alpha, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def mean_precision_head(z: np.ndarray, z0: np.ndarray):
    """Mean-precision parameterization alpha = softmax(z) * exp(z0)."""
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    z0c = np.clip(z0, -LOGIT_CLAMP, PRECISION_LOGIT_MAX)
    pi = softmax(zc)
    alpha = pi * np.exp(z0c)[..., None]
    active = (z > -LOGIT_CLAMP) & (z < LOGIT_CLAMP)
    active0 = (z0 > -LOGIT_CLAMP) & (z0 < PRECISION_LOGIT_MAX)
    return alpha, pi, active, active0


def mean_precision_head_backprop(alpha, pi, active, active0, grad_alpha):
    inner = np.sum(grad_alpha * pi, axis=-1, keepdims=True)
    grad_z = np.where(active, alpha * (grad_alpha - inner), 0.0)
    grad_z0 = np.where(active0, np.sum(grad_alpha * alpha, axis=-1), 0.0)
    return grad_z, grad_z0


# ---------------------------------------------------------------------------
# spec surface: single instances, gradients with respect to standard logits

def _as_logit_grad(grad_alpha: np.ndarray, model: DirichletParams) -> np.ndarray:
    return grad_alpha * model.alpha


def soft_ce(model: DirichletParams, target_mean: ProbVector) -> LossValueGrad:
    """Soft cross-entropy to the target mean; the plain-distillation baseline."""
    if target_mean.k != model.k:
        raise ValueError("dimension mismatch")
    value, grad = soft_ce_alpha_grad(model.alpha, target_mean.probs)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def dirichlet_nll(model: DirichletParams, s: EnsembleSlice) -> LossValueGrad:
    """Mean negative Dirichlet log-density of the member predictions."""
    if s.k != model.k:
        raise ValueError("dimension mismatch")
    meanlog = np.log(s.members).mean(axis=0)
    value, grad = nll_alpha_grad(model.alpha, meanlog)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def kl_forward(model: DirichletParams, proxy: DirichletParams) -> LossValueGrad:
    """KL[proxy || model]."""
    if proxy.k != model.k:
        raise ValueError("dimension mismatch")
    value, grad = fkl_alpha_grad(model.alpha, proxy.alpha)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def kl_reverse(model: DirichletParams, proxy: DirichletParams) -> LossValueGrad:
    """KL[model || proxy]."""
    if proxy.k != model.k:
        raise ValueError("dimension mismatch")
    value, grad = rkl_alpha_grad(model.alpha, proxy.alpha)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def with_plus_one(loss, model: DirichletParams, proxy: DirichletParams) -> LossValueGrad:
    """Evaluate a KL loss at (alpha+1, beta+1), Jacobian factor still alpha."""
    if proxy.k != model.k:
        raise ValueError("dimension mismatch")
    if loss is kl_forward:
        core = fkl_alpha_grad
    elif loss is kl_reverse:
        core = rkl_alpha_grad
    else:
        raise ValueError("with_plus_one supports kl_forward and kl_reverse")
    value, grad = core(model.alpha + 1.0, proxy.alpha + 1.0)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def grad_temperature(model: DirichletParams, proxy: DirichletParams,
                     t: float = 1.0, approx: bool = False) -> LossValueGrad:
    """Temperature-scaled forward KL; reduces to kl_forward at t = 1."""
    if proxy.k != model.k:
        raise ValueError("dimension mismatch")
    value, grad = temperature_alpha_grad(model.alpha, proxy.alpha, t, approx=approx)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def grad_aggregated(model: DirichletParams, proxy: DirichletParams, cutoff: int) -> LossValueGrad:
    """Forward KL with the low-mass tail merged into one aggregate class.

    Classes are ordered by descending proxy mass; the `cutoff` head classes
    stay separate and the rest are summed into a single class on both
    sides.  The aggregate class's gradient flows back to each merged logit
    through the sum, i.e. scaled by its own alpha.
    """
    if proxy.k != model.k:
        raise ValueError("dimension mismatch")
    value, grad = fkl_aggregated_alpha_grad(model.alpha, proxy.alpha, cutoff)
    return LossValueGrad(float(value), _as_logit_grad(grad, model))


def param_standard(z: np.ndarray):
    """alpha = exp(z) with its logit backprop (elementwise alpha factor)."""
    alpha, active = exp_head(np.asarray(z, dtype=float))
    params = DirichletParams(alpha)

    def backprop(grad_alpha: np.ndarray) -> np.ndarray:
        return exp_head_backprop(alpha, active, np.asarray(grad_alpha, dtype=float))

    return params, backprop


def param_mean_precision(z: np.ndarray, z0: float):
    """alpha = softmax(z) * exp(z0) with the full Jacobian backprop."""
    alpha, pi, active, active0 = mean_precision_head(
        np.asarray(z, dtype=float), np.asarray(z0, dtype=float))
    params = DirichletParams(alpha)

    def backprop(grad_alpha: np.ndarray):
        grad_z, grad_z0 = mean_precision_head_backprop(
            alpha, pi, active, active0, np.asarray(grad_alpha, dtype=float))
        return grad_z, float(grad_z0)

    return params, backprop
