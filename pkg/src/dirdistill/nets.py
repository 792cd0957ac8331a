"""Shared network plumbing: a small tanh MLP with hand-written backprop,
an Adam optimizer, and the flat binary checkpoint container used by both
distillation pipelines.

Everything is float64 and deterministic: parameter order is fixed, batch
reductions are plain numpy means over fixed shapes, and all randomness
flows through explicitly passed generators.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries where it happened."""


# ---------------------------------------------------------------------------
# dense trunk

def mlp_init(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> dict:
    return {
        "w1": rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, d_out)),
        "b2": np.zeros(d_out),
    }


def mlp_forward(params: dict, x: np.ndarray):
    h = np.tanh(x @ params["w1"] + params["b1"])
    out = h @ params["w2"] + params["b2"]
    return out, (x, h)


def mlp_backward(params: dict, cache, d_out: np.ndarray):
    x, h = cache
    grads = {
        "w2": h.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    d_h = d_out @ params["w2"].T
    d_pre = d_h * (1.0 - h * h)
    grads["w1"] = x.T @ d_pre
    grads["b1"] = d_pre.sum(axis=0)
    d_x = d_pre @ params["w1"].T
    return grads, d_x


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    state: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in params:
            g = grads[name]
            if name not in self.state:
                self.state[name] = (np.zeros_like(g), np.zeros_like(g))
            m, v = self.state[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.state[name] = (m, v)
            params[name] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# minibatch loop

def run_training(params: dict, arrays, loss_grad_fn, *, epochs: int,
                 batch_size: int, lr: float, rng: np.random.Generator,
                 what: str = "training") -> list:
    """Shuffled minibatch Adam over arrays sliced together along axis 0.

    `loss_grad_fn(params, batch_arrays)` returns (mean batch loss, grads).
    Returns the per-epoch mean loss trace; raises DivergenceError with the
    offending epoch/batch on a non-finite loss.
    """
    n = len(arrays[0])
    opt = Adam(lr=lr)
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = perm[start:start + batch_size]
            value, grads = loss_grad_fn(params, [a[idx] for a in arrays])
            if not np.isfinite(value):
                raise DivergenceError(f"{what}: non-finite loss at epoch {epoch}, batch {b}")
            opt.step(params, grads)
            total += value * idx.size
        trace.append(total / n)
    return trace


# ---------------------------------------------------------------------------
# checkpoint container: magic "DDML1", little-endian uint64 header length,
# JSON header (array names/shapes plus free-form metadata), then the arrays
# as raw little-endian float64 in header order.

CHECKPOINT_MAGIC = b"DDML1"


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    names = sorted(arrays)
    header = {
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_arrays(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a DDML1 checkpoint")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header["meta"]
