"""Low-rank factored task vectors.

A LoRA delta ``B @ A`` is a task vector whose only non-zero blocks are
weight matrices.  Composition and coefficient gradients work on the factors
directly; ``densify`` is the only place a full block-sized buffer is formed,
and every call is counted in ``DENSIFY_CALLS`` so tests can assert that the
factored paths never take it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tvkit.blocks import BlockedTensor, TaskVector
from tvkit.errors import ConfigError, NumericError, ShapeError

DENSIFY_CALLS = 0


@dataclass(frozen=True, eq=False)
class LoraFactor:
    """``delta = B @ A`` with A: (r, in_dim) and B: (out_dim, r)."""

    name: str
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float32, copy=True)
        B = np.array(self.B, dtype=np.float32, copy=True)
        if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[1]:
            raise ShapeError(f"factor {self.name!r}: A {A.shape} and B {B.shape} are not rank-consistent")
        r = A.shape[0]
        if r < 1 or r > min(A.shape[1], B.shape[0]):
            raise ShapeError(f"factor {self.name!r}: rank {r} outside [1, {min(A.shape[1], B.shape[0])}]")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def rank(self) -> int:
        return int(self.A.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.B.shape[0]), int(self.A.shape[1]))

    def delta(self) -> np.ndarray:
        return densify(self)


def densify(factor: LoraFactor) -> np.ndarray:
    """Dense (out_dim, in_dim) delta ``B @ A`` in 64-bit."""
    global DENSIFY_CALLS
    DENSIFY_CALLS += 1
    return factor.B.astype(np.float64) @ factor.A.astype(np.float64)


def factored_task_vector(id: str, base: BlockedTensor, factors: Sequence[LoraFactor], meta: dict | None = None) -> TaskVector:
    return TaskVector(id, base.fingerprint(), base.specs, factors={f.name: f for f in factors}, meta=dict(meta or {}))


def effective_rank(shape: tuple[int, int], rank: int) -> int:
    return max(1, min(rank, shape[0], shape[1]))


def finetune_lora(model, base: BlockedTensor, data, rank: int, config, id: str = "lora",
                  blocks: Sequence[str] | None = None, clip_rank: bool = True) -> TaskVector:
    """Train low-rank factors on the weight-matrix blocks of ``base``.

    B starts at zero and A at a small Gaussian, so the initial delta is
    exactly zero.  ``blocks`` restricts training to a subset of weight
    matrices.  With ``clip_rank`` a rank larger than a block allows is
    lowered to full rank for that block; otherwise it is an error.
    """
    from tvkit.net import as_batch, backward
    from tvkit.optim import AdamW

    if rank < 1:
        raise ConfigError("rank must be >= 1")
    targets = [s for s in base.specs if s.kind == "weight-matrix" and (blocks is None or s.name in blocks)]
    if not targets:
        raise ConfigError("no weight-matrix blocks selected for LoRA training")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x10A]))
    params = {}
    for s in targets:
        r = effective_rank(s.shape, rank) if clip_rank else rank
        if r > min(s.shape):
            raise ShapeError(f"rank {rank} exceeds min dimension of block {s.name!r} {s.shape}")
        A = rng.normal(0.0, 1.0 / np.sqrt(s.shape[1]), size=(r, s.shape[1]))
        params[s.name] = [A, np.zeros((s.shape[0], r))]
    flat = np.concatenate([p.reshape(-1) for pair in params.values() for p in pair])
    opt = AdamW(flat.size, lr=config.learning_rate, weight_decay=config.weight_decay,
                betas=config.betas, eps=config.eps)
    base64 = base.astype(np.float64)
    data = as_batch(data)
    shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5F]))

    def unpack(vec):
        o = 0
        for name, pair in params.items():
            for k in range(2):
                n = pair[k].size
                pair[k] = vec[o:o + n].reshape(pair[k].shape)
                o += n

    def current():
        blocks_now = {name: base64[name] + B @ A for name, (A, B) in params.items()}
        return base64.replace(blocks_now)

    unpack(flat)
    for epoch in range(config.epochs):
        order = shuffle.permutation(len(data))
        for step, start in enumerate(range(0, len(data), config.batch_size)):
            batch = data.take(order[start:start + config.batch_size])
            loss, grad = backward(model, current(), batch, "cross-entropy")
            if not np.isfinite(loss):
                raise NumericError(f"LoRA fine-tuning diverged at epoch {epoch} batch {step} (loss {loss})")
            g = []
            for name, (A, B) in params.items():
                G = grad[name]
                g.append((B.T @ G).reshape(-1))
                g.append((G @ A.T).reshape(-1))
            flat = opt.step(flat, np.concatenate(g))
            unpack(flat)
    factors = [LoraFactor(name, A, B) for name, (A, B) in params.items()]
    return factored_task_vector(id, base, factors, meta={"rank": rank, "kind": "lora"})

