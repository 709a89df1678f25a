"""Nesterov-momentum SGD and the warm-up + cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

from .layers import Parameter


class MissingGradientError(RuntimeError):
    pass


def sgd_nesterov_step(params: Iterable[Parameter], lr: float, momentum: float = 0.9,
                      weight_decay: float = 0.0) -> None:
    """One in-place Nesterov update; clears every gradient afterwards.

    ``g <- g + wd*w``; ``v <- mu*v + g``; ``w <- w - lr*(g + mu*v)``.
    """
    params = list(params)
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for p in params:
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.id!r} has no gradient")
    for p in params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        if momentum:
            p.momentum_buffer = momentum * p.momentum_buffer + g
            g = g + momentum * p.momentum_buffer
        p.data = p.data - lr * g
        p.grad = None


class NesterovSGD:
    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay

    def step(self) -> None:
        sgd_nesterov_step(self.params, self.lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def reset_state(self) -> None:
        for p in self.params:
            p.momentum_buffer = p.momentum_buffer * 0.0


def cosine_lr(round: int, total_rounds: int, lr0: float, warmup_rounds: int = 0) -> float:
    """Linear warm-up to ``lr0`` over ``warmup_rounds`` rounds, then cosine decay.

    ``round`` is clamped into ``[0, total_rounds - 1]``.
    """
    total_rounds = max(int(total_rounds), 1)
    warmup_rounds = max(int(warmup_rounds), 0)
    r = min(max(int(round), 0), total_rounds - 1)
    if r < warmup_rounds:
        return lr0 * (r + 1) / (warmup_rounds + 1)
    span = total_rounds - warmup_rounds
    t = (r - warmup_rounds) / span if span > 0 else 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t))
