"""SGD with momentum and L2 weight decay folded into the gradient."""
from __future__ import annotations

import numpy as np

from .autodiff import Gradients, Tensor


class SGD:
    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Gradients, clip: float | None = None) -> float:
        """Apply one update; returns the global gradient norm before clipping."""
        gs = [grads.get(p) for p in self.params]
        sq = 0.0
        for g in gs:
            if g is not None:
                sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        scale = clip / norm if clip is not None and norm > clip else 1.0
        for p, v, g in zip(self.params, self.velocity, gs):
            g = np.zeros_like(p.data) if g is None else g * scale
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data = p.data - self.lr * v
        return norm
