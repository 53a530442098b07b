from __future__ import annotations

from typing import Callable, List

import numpy as np

from neural.core import Parameter


def grad_check(
    loss_fn: Callable[[], float],
    params: List[Parameter],
    h: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max relative error between backprop and central differences over every coordinate.

    ``loss_fn`` returns the scalar loss and accumulates gradients into ``params``.
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        flat_grad = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            plus = _loss_only(loss_fn, params)
            flat[k] = orig - h
            minus = _loss_only(loss_fn, params)
            flat[k] = orig
            numeric = (plus - minus) / (2.0 * h)
            a = float(flat_grad[k])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst


def _loss_only(loss_fn: Callable[[], float], params: List[Parameter]) -> float:
    value = float(loss_fn())
    for p in params:
        p.zero_grad()
    return value
