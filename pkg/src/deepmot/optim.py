"""RMSprop and Adam over dicts of numpy parameter arrays (updated in place)."""

from __future__ import annotations

import numpy as np


def step_decay(lr0: float, iteration: int, factor: float = 0.95, every: int = 20000) -> float:
    """Learning rate after ``iteration`` samples: multiplied by ``factor`` every ``every``."""
    return lr0 * factor ** (iteration // every)


class RMSprop:
    """``v = a*v + (1-a)*g^2``; ``p -= lr * g / (sqrt(v) + eps)``."""

    def __init__(self, params: dict, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.sq = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            sq = self.sq[k]
            sq *= self.alpha
            sq += (1.0 - self.alpha) * g * g
            self.params[k] -= lr * g / (np.sqrt(sq) + self.eps)


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
