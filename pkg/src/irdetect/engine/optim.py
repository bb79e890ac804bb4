"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergedError


class Adam:
    """Bias-corrected Adam over a named parameter dict (updates in place)."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.params = params
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise TrainingDivergedError(f"non-finite gradient for {name!r}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, grads: dict[str, np.ndarray]):
    """Single optimizer step; parameters referenced by the state are updated."""
    state.step(grads)
