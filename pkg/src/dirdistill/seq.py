"""Token-level distribution distillation on a toy autoregressive task.

The task: each input is a conditioning tag; targets are drawn from a
seeded Markov chain per tag over a small vocabulary with reserved BOS and
EOS ids.  Teachers are softmax next-token models; the student is an
autoregressive network with a Dirichlet head that emits a distribution
over distributions at every step.

The module covers the full loop: corpus generation, teacher training,
token-level ensemble combination (product of expectations), beam-search
decoding, transfer-set construction (gold prefixes or B-best beam
hypotheses), token-wise distillation with a per-record proxy Dirichlet,
and Monte-Carlo sequence-level uncertainty estimators with closed-form
per-step terms.

Sequence-level estimators sample S chains from the student's own mean and
average per-step measures; each sampled sequence is normalized by its own
length, so a student emitting a constant concentration reproduces the
single-step closed forms exactly for any S.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .classify import HeadKind
from .dirichlet import (
    _entropy,
    epkl_from_alpha,
    mutual_info_from_alpha,
    rmi_from_alpha,
)
from .ensemble import clamp_renorm
from .losses import (
    exp_head,
    exp_head_backprop,
    fkl_alpha_grad,
    mean_precision_head,
    mean_precision_head_backprop,
    nll_alpha_grad,
    rkl_alpha_grad,
    softmax,
)
from .nets import DivergenceError, Adam, mlp_backward, mlp_forward, mlp_init
from .proxy import ProxyConfig, fit_proxy_batch

BOS_ID = 0
EOS_ID = 1
EOS_WEIGHT = 0.1  # per-step stop mass in generated chains


class TransferSource(str, Enum):
    REFERENCE = "reference"
    BEAM_BBEST = "beam_bbest"


class SeqLossMode(str, Enum):
    NLL = "end2_nll"
    FKL = "end2_fkl"
    RKL = "end2_rkl"


@dataclass(frozen=True)
class TokenSequence:
    """A target sequence; ends with EOS or was truncated at the length cap."""

    tokens: tuple
    log_prob: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SeqTask:
    """Toy corpus plus the generating chains (kept for oracle checks).

    `transitions[tag]` maps an order-length context of token ids to a
    distribution over next ids; BOS is never emitted.  The OOD corpus uses
    the same tags with their transition matrices swapped between tags.
    """

    sequences: tuple
    tags: np.ndarray
    ood_sequences: tuple
    ood_tags: np.ndarray
    transitions: np.ndarray  # (n_tags, K, ..., K) with `order` context axes
    k: int
    order: int
    l_max: int
    n_tags: int
    seed: int


def _chain_transitions(rng: np.random.Generator, k: int, order: int) -> np.ndarray:
    """Random transition tensor over all contexts; EOS gets fixed mass."""
    shape = (k,) * order + (k,)
    t = rng.gamma(1.0, 1.0, size=shape)
    t[..., BOS_ID] = 0.0
    t[..., EOS_ID] = 0.0
    t /= t.sum(axis=-1, keepdims=True)
    t *= 1.0 - EOS_WEIGHT
    t[..., EOS_ID] = EOS_WEIGHT
    return t


def _sample_sequence(rng: np.random.Generator, trans: np.ndarray, order: int,
                     l_max: int) -> TokenSequence:
    context = (BOS_ID,) * order
    tokens = []
    for _ in range(l_max):
        probs = trans[context]
        tok = int(rng.choice(trans.shape[-1], p=probs))
        tokens.append(tok)
        if tok == EOS_ID:
            break
        context = context[1:] + (tok,) if order > 1 else (tok,)
    return TokenSequence(tuple(tokens))


def gen_toy_seq_task(k: int, order: int, seed: int, n_sequences: int = 400,
                     n_tags: int = 2, l_max: int = 20) -> SeqTask:
    """Seeded corpus of (tag, sequence) pairs from per-tag Markov chains."""
    if k < 4:
        raise ValueError("need K >= 4 (two reserved ids plus real tokens)")
    if order < 1:
        raise ValueError("order must be >= 1")
    rng = np.random.default_rng(seed)
    transitions = np.stack([_chain_transitions(rng, k, order) for _ in range(n_tags)])
    tags = rng.integers(0, n_tags, size=n_sequences)
    sequences = tuple(
        _sample_sequence(rng, transitions[tag], order, l_max) for tag in tags)
    # OOD: same tags paired with the wrong chain (cyclic swap)
    ood_tags = rng.integers(0, n_tags, size=n_sequences)
    ood_sequences = tuple(
        _sample_sequence(rng, transitions[(tag + 1) % n_tags], order, l_max)
        for tag in ood_tags)
    return SeqTask(sequences=sequences, tags=tags, ood_sequences=ood_sequences,
                   ood_tags=ood_tags, transitions=transitions, k=k, order=order,
                   l_max=l_max, n_tags=n_tags, seed=seed)


# ---------------------------------------------------------------------------
# autoregressive model: [tag embedding | C token embeddings] -> MLP -> head

@dataclass
class ArModel:
    params: dict
    head: HeadKind
    k: int
    n_tags: int
    context_window: int
    embed_dim: int
    loss_trace: list = field(default_factory=list)


def ar_init(rng: np.random.Generator, k: int, n_tags: int, context_window: int,
            embed_dim: int, hidden: int, head: HeadKind) -> ArModel:
    out_dim = k + 1 if head is HeadKind.DIRICHLET_MEAN_PRECISION else k
    d_in = embed_dim * (context_window + 1)
    params = mlp_init(rng, d_in, hidden, out_dim)
    params["tok_emb"] = rng.normal(0.0, 0.5, (k, embed_dim))
    params["tag_emb"] = rng.normal(0.0, 0.5, (n_tags, embed_dim))
    return ArModel(params=params, head=head, k=k, n_tags=n_tags,
                   context_window=context_window, embed_dim=embed_dim)


def context_windows(contexts, window: int) -> np.ndarray:
    """Last `window` tokens of each prefix, left-padded with BOS."""
    out = np.full((len(contexts), window), BOS_ID, dtype=int)
    for i, ctx in enumerate(contexts):
        tail = tuple(ctx)[-window:]
        if tail:
            out[i, window - len(tail):] = tail
    return out


def _ar_features(model: ArModel, tags: np.ndarray, windows: np.ndarray) -> np.ndarray:
    b = windows.shape[0]
    tok = model.params["tok_emb"][windows].reshape(b, -1)
    tag = model.params["tag_emb"][tags]
    return np.concatenate([tag, tok], axis=1)


def ar_logits(model: ArModel, tags: np.ndarray, windows: np.ndarray):
    x = _ar_features(model, tags, windows)
    logits, cache = mlp_forward(model.params, x)
    return logits, cache


def ar_step_probs(model: ArModel, tag: int, context) -> np.ndarray:
    """Next-token categorical for one context (softmax or Dirichlet mean)."""
    windows = context_windows([context], model.context_window)
    logits, _ = ar_logits(model, np.asarray([tag]), windows)
    if model.head is HeadKind.SOFTMAX:
        return softmax(logits)[0]
    alpha = ar_step_alpha(model, tag, context)
    return alpha / alpha.sum()


def ar_step_alpha(model: ArModel, tag: int, context) -> np.ndarray:
    windows = context_windows([context], model.context_window)
    logits, _ = ar_logits(model, np.asarray([tag]), windows)
    if model.head is HeadKind.DIRICHLET:
        alpha, _ = exp_head(logits)
    elif model.head is HeadKind.DIRICHLET_MEAN_PRECISION:
        alpha, _, _, _ = mean_precision_head(logits[:, :-1], logits[:, -1])
    else:
        raise ValueError("softmax head has no Dirichlet output")
    return alpha[0]


def _ar_backward(model: ArModel, cache, tags, windows, d_logits) -> dict:
    grads, d_x = mlp_backward(model.params, cache, d_logits)
    e = model.embed_dim
    d_tag, d_tok = d_x[:, :e], d_x[:, e:].reshape(-1, e)
    g_tag = np.zeros_like(model.params["tag_emb"])
    np.add.at(g_tag, tags, d_tag)
    g_tok = np.zeros_like(model.params["tok_emb"])
    np.add.at(g_tok, windows.ravel(), d_tok)
    grads["tag_emb"] = g_tag
    grads["tok_emb"] = g_tok
    return grads


def _ar_train(model: ArModel, tags, windows, arrays, loss_grad_logits, *,
              epochs: int, batch_size: int, lr: float, rng, what: str) -> list:
    n = tags.shape[0]
    opt = Adam(lr=lr)
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = perm[start:start + batch_size]
            logits, cache = ar_logits(model, tags[idx], windows[idx])
            value, d_logits = loss_grad_logits(logits, [a[idx] for a in arrays])
            if not np.isfinite(value):
                raise DivergenceError(
                    f"{what}: non-finite loss at epoch {epoch}, batch {b} "
                    f"(first record {int(idx[0])})")
            grads = _ar_backward(model, cache, tags[idx], windows[idx], d_logits)
            opt.step(model.params, grads)
            total += value * idx.size
        trace.append(total / n)
    return trace


def _corpus_steps(task: SeqTask, window: int):
    """Flatten the corpus into per-step (tag, window, target, prefix) rows."""
    tags, prefixes, targets = [], [], []
    for tag, seq in zip(task.tags, task.sequences):
        prefix = ()
        for tok in seq.tokens:
            tags.append(int(tag))
            prefixes.append(prefix)
            targets.append(tok)
            prefix = prefix + (tok,)
    return (np.asarray(tags), context_windows(prefixes, window),
            np.asarray(targets), prefixes)


def train_seq_teachers(task: SeqTask, m: int, epochs: int = 8, lr: float = 3e-3,
                       seed: int = 0, embed_dim: int = 8, hidden: int = 48,
                       context_window: int = 3, batch_size: int = 256) -> list:
    """M softmax next-token models from independent seed streams."""
    if m < 2:
        raise ValueError("an ensemble needs M >= 2 members")
    tags, windows, targets, _ = _corpus_steps(task, context_window)
    onehot = np.eye(task.k)[targets]
    teachers = []
    for i in range(m):
        rng = np.random.default_rng((seed, 0, i))
        model = ar_init(rng, task.k, task.n_tags, context_window, embed_dim,
                        hidden, HeadKind.SOFTMAX)

        def loss_grad_logits(logits, arrays):
            (t,) = arrays
            probs = softmax(logits)
            value = float(np.mean(-np.sum(t * np.log(clamp_renorm(probs)), axis=1)))
            return value, (probs - t) / logits.shape[0]

        model.loss_trace = _ar_train(model, tags, windows, [onehot], loss_grad_logits,
                                     epochs=epochs, batch_size=batch_size, lr=lr,
                                     rng=rng, what=f"teacher {i}")
        teachers.append(model)
    return teachers


# ---------------------------------------------------------------------------
# ensemble combination and decoding

def combine_product_of_expectations(members, context, tag: int) -> np.ndarray:
    """Token-level ensemble mean at one step (the product-of-expectations
    chain combines these per-step means across the sequence)."""
    if not members:
        raise ValueError("no members")
    probs = np.stack([ar_step_probs(m, tag, context) for m in members])
    return probs.mean(axis=0)


def beam_search(score_fn, x, b: int, l_max: int, k: int):
    """Length-unnormalized beam search, deterministic tie-breaking.

    `score_fn(x, context_tuple)` returns per-token log-probabilities.  Ties
    are broken by lower token id, then lower hypothesis index.  Returns the
    B best hypotheses ranked by total log-probability.
    """
    if b < 1:
        raise ValueError("beam width must be >= 1")
    active = [((), 0.0)]
    finished = []
    for _ in range(l_max):
        if not active:
            break
        candidates = []
        for hyp_idx, (tokens, logp) in enumerate(active):
            scores = score_fn(x, tokens)
            for tok in range(k):
                candidates.append((-(logp + float(scores[tok])), tok, hyp_idx))
        candidates.sort()
        survivors = []
        for neg_logp, tok, hyp_idx in candidates[:b - len(finished)]:
            tokens = active[hyp_idx][0] + (tok,)
            if tok == EOS_ID:
                finished.append(TokenSequence(tokens, log_prob=-neg_logp))
            else:
                survivors.append((tokens, -neg_logp))
        active = survivors
    finished.extend(TokenSequence(t, log_prob=lp) for t, lp in active)
    finished.sort(key=lambda s: (-s.log_prob, s.tokens))
    return finished[:b]


# ---------------------------------------------------------------------------
# transfer sets

@dataclass(frozen=True)
class TransferRecord:
    input_id: int
    context: tuple
    members: np.ndarray  # (M, K) member next-token distributions


@dataclass(frozen=True)
class TransferSet:
    records: tuple
    source: TransferSource
    beam_width: int | None = None

    def __len__(self) -> int:
        return len(self.records)


def _member_step_matrix(teachers, tag: int, contexts) -> np.ndarray:
    """(n_contexts, M, K) member distributions, rows clamped."""
    windows = context_windows(contexts, teachers[0].context_window)
    tags = np.full(len(contexts), tag, dtype=int)
    probs = []
    for t in teachers:
        logits, _ = ar_logits(t, tags, windows)
        probs.append(softmax(logits))
    return clamp_renorm(np.stack(probs, axis=1))


def build_transfer_set(teachers, task: SeqTask, source=TransferSource.REFERENCE,
                       b: int = 4) -> TransferSet:
    """Record the M member distributions at every prefix of the chosen
    hypotheses: gold sequences, or the teacher combination's B-best beams."""
    source = TransferSource(source)
    records = []
    for i, (tag, seq) in enumerate(zip(task.tags, task.sequences)):
        tag = int(tag)
        if source is TransferSource.REFERENCE:
            hypotheses = [seq]
        else:
            def score(x, ctx):
                return np.log(combine_product_of_expectations(teachers, ctx, x))
            hypotheses = beam_search(score, tag, b, task.l_max, task.k)
        for hyp in hypotheses:
            prefixes = [hyp.tokens[:l] for l in range(len(hyp))]
            slices = _member_step_matrix(teachers, tag, prefixes)
            for prefix, members in zip(prefixes, slices):
                records.append(TransferRecord(input_id=i, context=tuple(prefix),
                                              members=members))
    width = None if source is TransferSource.REFERENCE else b
    return TransferSet(records=tuple(records), source=source, beam_width=width)


def save_transfer_set(ts: TransferSet, path) -> None:
    """Newline-delimited JSON records {input_id, context, members}."""
    with open(path, "w", encoding="utf-8") as f:
        for r in ts.records:
            f.write(json.dumps({
                "input_id": r.input_id,
                "context": list(r.context),
                "members": r.members.tolist(),
            }, sort_keys=True))
            f.write("\n")


def load_transfer_set(path, source=TransferSource.REFERENCE,
                      beam_width: int | None = None) -> TransferSet:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            doc = json.loads(line)
            records.append(TransferRecord(
                input_id=int(doc["input_id"]),
                context=tuple(int(t) for t in doc["context"]),
                members=np.asarray(doc["members"], dtype=float),
            ))
    return TransferSet(records=tuple(records), source=TransferSource(source),
                       beam_width=beam_width)


# ---------------------------------------------------------------------------
# distillation

def seq_distill(teachers, task: SeqTask, transfer: TransferSet, mode=SeqLossMode.RKL,
                proxy_cfg: ProxyConfig = ProxyConfig(), epochs: int = 10,
                lr: float = 3e-3, seed: int = 0, embed_dim: int = 8,
                hidden: int = 48, context_window: int = 3, batch_size: int = 256,
                student_head: HeadKind = HeadKind.DIRICHLET_MEAN_PRECISION) -> ArModel:
    """Token-wise distillation: every record contributes one Dirichlet loss
    term against a proxy fitted to that record's member distributions."""
    if not transfer.records:
        raise ValueError("empty transfer set")
    mode = SeqLossMode(mode)
    student_head = HeadKind(student_head)
    if student_head is HeadKind.SOFTMAX:
        raise ValueError("the distribution student needs a Dirichlet head")
    tags = np.asarray([int(task.tags[r.input_id]) for r in transfer.records])
    windows = context_windows([r.context for r in transfer.records], context_window)
    members = np.stack([r.members for r in transfer.records])
    if mode is SeqLossMode.NLL:
        targets = np.log(members).mean(axis=1)
    elif mode is SeqLossMode.FKL:
        targets = fit_proxy_batch(members, proxy_cfg)
    else:
        targets = fit_proxy_batch(members, replace(proxy_cfg, plus_one=False))

    rng = np.random.default_rng((seed, 1))
    model = ar_init(rng, task.k, task.n_tags, context_window, embed_dim, hidden,
                    student_head)

    def loss_grad_logits(logits, arrays):
        (t,) = arrays
        if student_head is HeadKind.DIRICHLET:
            alpha, active = exp_head(logits)
        else:
            alpha, pi, active, active0 = mean_precision_head(logits[:, :-1], logits[:, -1])
        if mode is SeqLossMode.NLL:
            values, grad_alpha = nll_alpha_grad(alpha, t)
        elif mode is SeqLossMode.FKL:
            values, grad_alpha = fkl_alpha_grad(alpha, t)
        else:
            values, grad_alpha = rkl_alpha_grad(alpha + 1.0, t + 1.0)
        grad_alpha = grad_alpha / logits.shape[0]
        if student_head is HeadKind.DIRICHLET:
            d_logits = exp_head_backprop(alpha, active, grad_alpha)
        else:
            d_z, d_z0 = mean_precision_head_backprop(alpha, pi, active, active0, grad_alpha)
            d_logits = np.concatenate([d_z, d_z0[:, None]], axis=1)
        return float(np.mean(values)), d_logits

    model.loss_trace = _ar_train(model, tags, windows, [targets], loss_grad_logits,
                                 epochs=epochs, batch_size=batch_size, lr=lr,
                                 rng=rng, what=f"seq distill[{mode.value}]")
    return model


# ---------------------------------------------------------------------------
# sequence-level uncertainty

@dataclass(frozen=True)
class SeqUncertainty:
    """Monte-Carlo sequence uncertainty estimates, in nats per token."""

    h_hat: float
    i_hat: float
    k_hat: float
    m_hat: float
    samples: int

    def __post_init__(self):
        values = (self.h_hat, self.i_hat, self.k_hat, self.m_hat)
        if not all(np.isfinite(v) for v in values):
            raise ValueError("uncertainty estimates must be finite")
        if self.i_hat > self.h_hat + 1e-9:
            raise ValueError("mutual information cannot exceed total entropy")
        if self.k_hat < 0.0:
            raise ValueError("EPKL estimate must be non-negative")


def _step_measures(alpha: np.ndarray):
    mean = alpha / alpha.sum()
    return (float(_entropy(mean)), float(mutual_info_from_alpha(alpha)),
            float(epkl_from_alpha(alpha)), float(rmi_from_alpha(alpha)))


def seq_uncertainty_mc(student: ArModel, x: int, s: int, seed: int = 0,
                       l_max: int = 20) -> SeqUncertainty:
    """Sample S chains from the student's mean and average the per-step
    closed forms, each chain normalized by its own length."""
    if s < 1:
        raise ValueError("need at least one sample")
    sums = np.zeros(4)
    for idx in range(s):
        rng = np.random.default_rng((seed, idx))
        context = ()
        totals = np.zeros(4)
        length = 0
        for _ in range(l_max):
            alpha = ar_step_alpha(student, x, context)
            totals += np.asarray(_step_measures(alpha))
            mean = alpha / alpha.sum()
            tok = int(rng.choice(alpha.size, p=mean / mean.sum()))
            length += 1
            if tok == EOS_ID:
                break
            context = context + (tok,)
        sums += totals / length
    h, i, k, m = sums / s
    return SeqUncertainty(h_hat=h, i_hat=i, k_hat=k, m_hat=m, samples=s)


def seq_uncertainty_forced(student: ArModel, x: int, tokens) -> SeqUncertainty:
    """Teacher-forced variant: per-step measures along a given sequence
    (used to score in-distribution vs swapped-chain corpora)."""
    tokens = tuple(tokens)
    if not tokens:
        raise ValueError("empty sequence")
    totals = np.zeros(4)
    context = ()
    for tok in tokens:
        alpha = ar_step_alpha(student, x, context)
        totals += np.asarray(_step_measures(alpha))
        context = context + (int(tok),)
    h, i, k, m = totals / len(tokens)
    return SeqUncertainty(h_hat=h, i_hat=i, k_hat=k, m_hat=m, samples=1)
