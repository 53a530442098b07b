from __future__ import annotations

import math
from typing import Dict, List, Optional

import numpy as np

from models.errors import NumericError
from neural.core import Parameter


def global_grad_norm(params: List[Parameter]) -> float:
    return math.sqrt(math.fsum(float(np.sum(p.grad * p.grad)) for p in params))


class Adam:
    """Adam with bias correction and optional global gradient-norm clipping."""

    def __init__(
        self,
        params: List[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        clip_norm: Optional[float] = 5.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.t = 0
        self.m: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.value) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"Non-finite gradient in parameter {p.name}")

        scale = 1.0
        if self.clip_norm is not None and self.clip_norm > 0:
            norm = global_grad_norm(self.params)
            if norm > self.clip_norm:
                scale = self.clip_norm / norm

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad * scale if scale != 1.0 else p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
        self.zero_grad()
