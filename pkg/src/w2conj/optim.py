"""Adam with an optional cosine-annealed learning rate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def cosine_lr(step, n_iters, lr_init, floor_fraction=1e-4):
    """Cosine decay from ``lr_init`` at step 0 to ``lr_init * floor_fraction`` at ``n_iters``."""
    if n_iters <= 0:
        return lr_init
    t = min(max(step, 0), n_iters) / n_iters
    return lr_init * (floor_fraction + (1.0 - floor_fraction) * 0.5 * (1.0 + math.cos(math.pi * t)))


def cosine_between(step, n_iters, lr_start, lr_end):
    """Cosine interpolation from ``lr_start`` to ``lr_end`` over ``n_iters`` steps."""
    if n_iters <= 0:
        return lr_start
    t = min(max(step, 0), n_iters) / n_iters
    return lr_end + (lr_start - lr_end) * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    count: int = 0


@dataclass
class Adam:
    """Adam on flat arrays (any leading shape works elementwise).

    ``schedule`` maps the update count to a learning rate; if absent ``lr``
    is used throughout.
    """

    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    schedule: Optional[Callable[[int], float]] = None

    def init(self, values) -> AdamState:
        return AdamState(np.zeros_like(values), np.zeros_like(values), 0)

    def update(self, values, grad, state: AdamState):
        b1, b2 = self.betas
        lr = self.schedule(state.count) if self.schedule is not None else self.lr
        count = state.count + 1
        m = b1 * state.m + (1 - b1) * grad
        v = b2 * state.v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** count)
        v_hat = v / (1 - b2 ** count)
        values = values - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return values, AdamState(m, v, count)
