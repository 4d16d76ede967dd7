"""Adam with decoupled weight decay over a flat parameter vector."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, size: int, lr: float = 1e-1, weight_decay: float = 1e-1,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, trainable: np.ndarray | None = None) -> np.ndarray:
        """Return updated parameters; entries outside ``trainable`` are left untouched."""
        self.t += 1
        grad = np.asarray(grad, dtype=np.float64)
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        new = params * (1 - self.lr * self.weight_decay) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if trainable is not None:
            new = np.where(trainable, new, params)
        return new
