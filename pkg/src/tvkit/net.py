"""Toy encoder with a frozen cosine-similarity head.

Each hidden layer computes ``gelu(layernorm(h W^T + b) * gain + bias)``; a
final linear map produces the latent ``z``, which is L2-normalised and
compared against frozen unit-norm class embeddings:

    logits = logit_scale * <z / |z|, e_c>

Class embeddings travel with the data (each task has its own frozen head) and
are never part of the parameter blocks.  Gradients are hand-written reverse
mode; ``jvp`` propagates (value, tangent) pairs through the same graph.
All arithmetic is 64-bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import ndtr

from tvkit.blocks import BlockedTensor, BlockSpec, TaskVector, check_task_vectors, compose_arrays
from tvkit.errors import ConfigError, NumericError, ShapeError

LOSS_KINDS = ("cross-entropy", "negated-cross-entropy", "entropy")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ToyModel:
    in_dim: int
    emb_dim: int
    depth: int = 3
    width: int = 64
    logit_scale: float = 10.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if min(self.in_dim, self.emb_dim, self.width) < 1 or self.depth < 0:
            raise ConfigError(f"invalid model dimensions {self}")
        if self.logit_scale <= 0:
            raise ConfigError("logit_scale must be positive")

    def specs(self) -> tuple[BlockSpec, ...]:
        out = []
        prev = self.in_dim
        for l in range(self.depth):
            out += [
                BlockSpec(f"layers.{l}.weight", (self.width, prev), "weight-matrix"),
                BlockSpec(f"layers.{l}.bias", (self.width,), "bias"),
                BlockSpec(f"layers.{l}.ln.gain", (self.width,), "ln-gain"),
                BlockSpec(f"layers.{l}.ln.bias", (self.width,), "ln-bias"),
            ]
            prev = self.width
        out += [
            BlockSpec("proj.weight", (self.emb_dim, prev), "weight-matrix"),
            BlockSpec("proj.bias", (self.emb_dim,), "bias"),
        ]
        return tuple(out)

    def init(self, seed: int) -> BlockedTensor:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
        arrays = []
        for s in self.specs():
            if s.kind == "weight-matrix":
                arrays.append(rng.normal(0.0, 1.0 / np.sqrt(s.shape[1]), size=s.shape))
            elif s.kind == "ln-gain":
                arrays.append(np.ones(s.shape))
            else:
                arrays.append(np.zeros(s.shape))
        return BlockedTensor(self.specs(), arrays)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ToyModel":
        return cls(**{k: d[k] for k in ("in_dim", "emb_dim", "depth", "width", "logit_scale", "ln_eps") if k in d})


@dataclass(frozen=True, eq=False)
class Batch:
    """Inputs, labels and the frozen heads they are scored against.

    ``heads`` is (T, C, emb_dim) with unit-norm rows; example b uses
    ``heads[head_index[b]]``.
    """

    inputs: np.ndarray
    labels: np.ndarray
    heads: np.ndarray
    head_index: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        h = np.asarray(self.heads, dtype=np.float64)
        if h.ndim == 2:
            h = h[None]
        idx = np.zeros(len(y), dtype=np.int64) if self.head_index is None else np.asarray(self.head_index, dtype=np.int64)
        if x.ndim != 2 or len(x) != len(y) or len(idx) != len(y):
            raise ShapeError(f"inconsistent batch: inputs {x.shape}, labels {y.shape}, head_index {idx.shape}")
        if len(y) and (y.min() < 0 or y.max() >= h.shape[1]):
            raise ShapeError(f"labels must lie in [0, {h.shape[1]})")
        if len(idx) and (idx.min() < 0 or idx.max() >= h.shape[0]):
            raise ShapeError("head_index out of range")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "heads", h)
        object.__setattr__(self, "head_index", idx)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.heads.shape[1])

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.inputs[idx], self.labels[idx], self.heads, self.head_index[idx])

    def with_inputs(self, inputs: np.ndarray) -> "Batch":
        return Batch(inputs, self.labels, self.heads, self.head_index)

    def with_labels(self, labels: np.ndarray) -> "Batch":
        return Batch(self.inputs, labels, self.heads, self.head_index)

    def head_matrix(self) -> np.ndarray:
        return self.heads[self.head_index]

    @staticmethod
    def concat(batches: Sequence["Batch"]) -> "Batch":
        batches = [b for b in batches]
        if not batches:
            raise ConfigError("nothing to concatenate")
        heads, index, offset = [], [], 0
        for b in batches:
            heads.append(b.heads)
            index.append(b.head_index + offset)
            offset += b.heads.shape[0]
        if len({h.shape[1:] for h in heads}) != 1:
            raise ShapeError("batches with different class counts cannot be concatenated")
        return Batch(np.concatenate([b.inputs for b in batches]), np.concatenate([b.labels for b in batches]),
                     np.concatenate(heads), np.concatenate(index))


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    if hasattr(data, "as_batch"):
        return data.as_batch()
    if isinstance(data, (list, tuple)):
        return Batch.concat([as_batch(d) for d in data])
    raise TypeError(f"cannot interpret {type(data).__name__} as a batch")


# parameter plumbing

def _unpack(model: ToyModel, theta) -> list[np.ndarray]:
    specs = model.specs()
    if isinstance(theta, BlockedTensor):
        if theta.specs != specs:
            raise ShapeError("parameter blocks do not match the model's block inventory")
        arrays = theta.arrays
    else:
        arrays = theta
        if len(arrays) != len(specs):
            raise ShapeError(f"expected {len(specs)} parameter arrays, got {len(arrays)}")
    return [np.asarray(a, dtype=np.float64).reshape(s.shape) for s, a in zip(specs, arrays)]


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _check(arr, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {where}")


def _encode(model: ToyModel, p: list[np.ndarray], x: np.ndarray, keep: bool = False):
    h = x
    cache = []
    for l in range(model.depth):
        W, b, g, beta = p[4 * l:4 * l + 4]
        a = h @ W.T + b
        c = a - a.mean(axis=1, keepdims=True)
        var = (c * c).mean(axis=1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + model.ln_eps)
        ahat = c * rstd
        n = ahat * g + beta
        out = gelu(n)
        _check(out, f"layer {l}")
        if keep:
            cache.append((h, ahat, rstd, n))
        h = out
    Wp, bp = p[-2:]
    z = h @ Wp.T + bp
    _check(z, "projection")
    return z, h, cache


def _head(model: ToyModel, z: np.ndarray, batch: Batch):
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise NumericError("zero-norm latent in head")
    u = z / norm
    H = batch.head_matrix()
    logits = model.logit_scale * np.einsum("bce,be->bc", H, u)
    return logits, u, norm, H


def features(model: ToyModel, theta, inputs: np.ndarray) -> np.ndarray:
    """Latent representation ``z`` before normalisation."""
    z, _, _ = _encode(model, _unpack(model, theta), np.asarray(inputs, dtype=np.float64))
    return z


def forward(model: ToyModel, theta, batch: Batch, threads: int = 1) -> np.ndarray:
    """Logits (B, C).  ``threads > 1`` shards rows; results equal the sequential path."""
    p = _unpack(model, theta)
    if threads <= 1 or len(batch) < 2 * threads:
        z, _, _ = _encode(model, p, batch.inputs)
        return _head(model, z, batch)[0]
    shards = np.array_split(np.arange(len(batch)), threads)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda idx: _head(model, _encode(model, p, batch.inputs[idx])[0], batch.take(idx))[0], shards))
    return np.concatenate(parts)


def predict(model: ToyModel, theta, batch: Batch, threads: int = 1) -> np.ndarray:
    """Top-1 class per example; exact ties resolve to the lowest class index."""
    return np.argmax(forward(model, theta, batch, threads=threads), axis=1)


# losses on logits

def softmax(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None):
    """Mean over examples of ``-w_b * sum_c t_bc log softmax(logits)_bc`` and its cotangent."""
    B = len(logits)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    logp = log_softmax(logits)
    per = -(targets * logp).sum(axis=1)
    value = float((w * per).sum() / B)
    # d/dlogits of -t.log_softmax = p * sum(t) - t
    cot = (softmax(logits) * targets.sum(axis=1, keepdims=True) - targets) * (w / B)[:, None]
    return value, cot


def loss_and_cotangent(logits: np.ndarray, labels: np.ndarray, kind: str):
    B, C = logits.shape
    if kind in ("cross-entropy", "negated-cross-entropy"):
        value, cot = soft_cross_entropy(logits, np.eye(C)[labels])
        if kind == "negated-cross-entropy":
            return -value, -cot
        return value, cot
    if kind == "entropy":
        p = softmax(logits)
        logp = log_softmax(logits)
        ent = -(p * logp).sum(axis=1)
        cot = -p * (logp + ent[:, None]) / B
        return float(ent.mean()), cot
    raise ConfigError(f"unknown loss kind {kind!r}")


LossSpec = Union[str, np.ndarray, Callable[[np.ndarray], tuple]]


def resolve_loss(logits: np.ndarray, batch: Batch, loss: LossSpec):
    if isinstance(loss, str):
        return loss_and_cotangent(logits, batch.labels, loss)
    if callable(loss):
        return loss(logits)
    cot = np.asarray(loss, dtype=np.float64)
    if cot.shape != logits.shape:
        raise ShapeError(f"cotangent shape {cot.shape} != logits shape {logits.shape}")
    return float((cot * logits).sum()), cot


def _backprop(model: ToyModel, p, batch: Batch, dlogits, z, h_last, cache, u, norm, H) -> list[np.ndarray]:
    grads = [None] * len(p)
    du = model.logit_scale * np.einsum("bc,bce->be", dlogits, H)
    dz = (du - u * (du * u).sum(axis=1, keepdims=True)) / norm
    Wp = p[-2]
    grads[-2] = dz.T @ h_last
    grads[-1] = dz.sum(axis=0)
    dh = dz @ Wp
    for l in reversed(range(model.depth)):
        W, _, g, _ = p[4 * l:4 * l + 4]
        h_in, ahat, rstd, n = cache[l]
        dn = dh * gelu_grad(n)
        grads[4 * l + 2] = (dn * ahat).sum(axis=0)
        grads[4 * l + 3] = dn.sum(axis=0)
        dahat = dn * g
        da = rstd * (dahat - dahat.mean(axis=1, keepdims=True)
                     - ahat * (dahat * ahat).mean(axis=1, keepdims=True))
        grads[4 * l] = da.T @ h_in
        grads[4 * l + 1] = da.sum(axis=0)
        dh = da @ W
    return grads


def backward_arrays(model: ToyModel, theta, batch: Batch, loss: LossSpec = "cross-entropy"):
    """(loss, logits, per-block 64-bit gradient arrays) without wrapping."""
    p = _unpack(model, theta)
    z, h_last, cache = _encode(model, p, batch.inputs, keep=True)
    logits, u, norm, H = _head(model, z, batch)
    value, dlogits = resolve_loss(logits, batch, loss)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    grads = _backprop(model, p, batch, dlogits, z, h_last, cache, u, norm, H)
    return value, logits, grads


def backward(model: ToyModel, theta, batch: Batch, loss: LossSpec = "cross-entropy"):
    """Loss value and its gradient with respect to every parameter block.

    ``loss`` is a kind name, an explicit cotangent on the logits, or a
    callable ``logits -> (value, cotangent)``.
    """
    value, _, grads = backward_arrays(model, theta, batch, loss)
    return value, BlockedTensor(model.specs(), grads, dtype=np.float64)


def vjp(model: ToyModel, theta, batch: Batch, cotangent: np.ndarray) -> BlockedTensor:
    return backward(model, theta, batch, np.asarray(cotangent))[1]


def jvp_arrays(model: ToyModel, theta0, direction, batch: Batch):
    """(logits, directional derivative of logits) in a single dual pass."""
    p = _unpack(model, theta0)
    d = _unpack(model, direction)
    h = batch.inputs
    dh = np.zeros_like(h)
    for l in range(model.depth):
        W, b, g, beta = p[4 * l:4 * l + 4]
        dW, db, dg, dbeta = d[4 * l:4 * l + 4]
        a = h @ W.T + b
        da = dh @ W.T + h @ dW.T + db
        c = a - a.mean(axis=1, keepdims=True)
        dc = da - da.mean(axis=1, keepdims=True)
        var = (c * c).mean(axis=1, keepdims=True)
        dvar = 2.0 * (c * dc).mean(axis=1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + model.ln_eps)
        drstd = -0.5 * rstd ** 3 * dvar
        ahat = c * rstd
        dahat = dc * rstd + c * drstd
        n = ahat * g + beta
        dn = dahat * g + ahat * dg + dbeta
        h, dh = gelu(n), gelu_grad(n) * dn
        _check(h, f"layer {l}")
    Wp, bp = p[-2:]
    dWp, dbp = d[-2:]
    z = h @ Wp.T + bp
    dz = dh @ Wp.T + h @ dWp.T + dbp
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    u = z / norm
    du = (dz - u * (u * dz).sum(axis=1, keepdims=True)) / norm
    H = batch.head_matrix()
    s = model.logit_scale
    return s * np.einsum("bce,be->bc", H, u), s * np.einsum("bce,be->bc", H, du)


def jvp(model: ToyModel, theta0, direction, batch: Batch) -> np.ndarray:
    """Exact forward-mode derivative of the logits at ``theta0`` along ``direction``."""
    if isinstance(direction, BlockedTensor) and isinstance(theta0, BlockedTensor):
        direction.check_compatible(theta0)
    return jvp_arrays(model, theta0, direction, batch)[1]


def linearized_forward(model: ToyModel, theta0: BlockedTensor, coeffs, tvs: Sequence[TaskVector],
                       batch: Batch) -> np.ndarray:
    """Logits of the first-order Taylor model around ``theta0`` at ``theta0 + sum Lambda tau``."""
    from tvkit.blocks import coefficient_array

    check_task_vectors(theta0, tvs)
    lam = coefficient_array(coeffs, theta0, tvs)
    zero = BlockedTensor.zeros(theta0.specs, dtype=np.float64)
    delta = compose_arrays(zero, tvs, lam)
    f0, df = jvp_arrays(model, theta0, delta, batch)
    return f0 + df
