"""Adam and the epoch step-decay learning rate."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, FrozenModelError

DEFAULT_LR = 2e-4
DEFAULT_DECAY = 0.2
DEFAULT_PERIOD = 7


def lr_at(epoch: int, lr0: float = DEFAULT_LR, decay: float = DEFAULT_DECAY, period: int = DEFAULT_PERIOD) -> float:
    """``lr0 * (1 - decay) ** (epoch // period)``; a decay of 0.2 keeps 80% per period."""
    if period < 1:
        raise ConfigError("decay period must be a positive number of epochs")
    if not 0 <= decay <= 1:
        raise ConfigError(f"decay fraction must lie in [0, 1], got {decay}")
    if epoch < 0:
        raise ConfigError("epoch must be non-negative")
    return lr0 * (1.0 - decay) ** (epoch // period)


class Adam:
    """Bias-corrected Adam bound to one model's parameter list."""

    def __init__(self, model, beta1=0.9, beta2=0.999, eps=1e-8):
        for b in (beta1, beta2):
            if not 0 < b < 1:
                raise ConfigError("Adam betas must lie in (0, 1)")
        self.model = model
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in model.params]
        self.v = [np.zeros_like(p.value) for p in model.params]

    def step(self, lr: float) -> None:
        if self.model.frozen:
            raise FrozenModelError("optimizer step on a frozen model")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.model.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

