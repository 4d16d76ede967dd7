"""Full-parameter training: pre-training the toy encoder and fine-tuning it per task."""

from __future__ import annotations

import numpy as np

from tvkit.blocks import BlockedTensor
from tvkit.errors import NumericError
from tvkit.learn import TrainConfig
from tvkit.net import as_batch, backward_arrays
from tvkit.optim import AdamW


def finetune(model, theta: BlockedTensor, data, config: TrainConfig) -> BlockedTensor:
    """AdamW on every parameter block; returns 32-bit weights.

    With ``config.epochs == 0`` the input weights come back unchanged.
    """
    batch = as_batch(data)
    if config.epochs == 0:
        return theta.astype(np.float32)
    specs = theta.specs
    sizes = [s.size for s in specs]
    flat = theta.flatten()
    opt = AdamW(flat.size, lr=config.learning_rate, weight_decay=config.weight_decay,
                betas=config.betas, eps=config.eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xF7]))
    splits = np.cumsum(sizes)[:-1]
    for epoch in range(config.epochs):
        order = rng.permutation(len(batch))
        for step, start in enumerate(range(0, len(batch), config.batch_size)):
            mb = batch.take(order[start:start + config.batch_size])
            value, _, grads = backward_arrays(model, np.split(flat, splits), mb)
            if not np.isfinite(value):
                raise NumericError(f"fine-tuning diverged at epoch {epoch} batch {step}")
            flat = opt.step(flat, np.concatenate([g.reshape(-1) for g in grads]))
    return BlockedTensor.from_flat(specs, flat)
