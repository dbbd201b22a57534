"""Adam optimizer with bias correction."""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .layers import Parameter


class Adam:
    def __init__(self, params: List[Parameter], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: Optional[float] = None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def grad_norm(self) -> float:
        sq = sum(float(np.sum(p.grad * p.grad)) for p in self.params if p.grad is not None and not p.frozen)
        return float(np.sqrt(sq))

    def step(self):
        """Apply one update from the accumulated ``.grad`` of every unfrozen parameter."""
        self.t += 1
        scale = 1.0
        if self.clip_norm is not None:
            gn = self.grad_norm()
            if gn > self.clip_norm:
                scale = self.clip_norm / gn
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.frozen or p.grad is None:
                continue
            g = p.grad * scale
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
