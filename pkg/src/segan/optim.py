"""RMSprop with a leaky squared-gradient cache.

cache <- rho * cache + (1 - rho) * g^2
theta <- theta - lr * g / (sqrt(cache) + eps)

The epsilon sits outside the square root. All state lives in this object, so
two optimizers stepped with identical gradients stay bit-identical.
"""

from __future__ import annotations

import numpy as np

from .engine import Parameter


class RMSprop:
    def __init__(self, params: list[Parameter], lr: float = 0.0002,
                 rho: float = 0.9, eps: float = 1e-6):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.cache = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, c in zip(self.params, self.cache):
            g = p.grad
            if g is None:
                continue
            c *= self.rho
            c += (1.0 - self.rho) * g * g
            p.data -= (self.lr * g / (np.sqrt(c) + self.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
