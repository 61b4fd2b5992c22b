from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import TrainingError
from .tensor import Param, Tensor, zero_grad


def global_grad_norm(params: Sequence[Param]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))


def clip_grad_norm(params: Sequence[Param], max_norm: float = 1.0) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Sequence[Param], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(params: Sequence[Param], batch, optimizer: Adam, loss_fn: Callable[[object], Tensor],
               lr: float | None = None, max_norm: float = 1.0) -> float:
    """zero-grad, forward, backward, clip, update; returns the loss value."""
    zero_grad(params)
    loss = loss_fn(batch)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at optimizer step {optimizer.t + 1}")
    loss.backward()
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        bad = [p.name for p in params if not np.all(np.isfinite(p.grad))]
        raise TrainingError(f"non-finite gradients in {bad[:5]} at optimizer step {optimizer.t + 1}")
    clip_grad_norm(params, max_norm)
    optimizer.step(lr)
    return value
