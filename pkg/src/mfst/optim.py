"""SGD with momentum, coupled L2 weight decay, warmup + cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .config import OptimizerConfig
from .tensor import Parameter, ShapeError


def lr_at(step: int, steps_per_epoch: int, cfg: OptimizerConfig) -> float:
    """Linear ramp to lr_peak over the warmup epochs, then cosine decay to 0
    at the final step."""
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warm:
        return cfg.lr_peak * (step + 1) / warm
    frac = (step - warm) / max(total - warm, 1)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * frac))


class SgdOptimizer:
    def __init__(self, params: list[Parameter], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {p.name: np.zeros_like(p.data) for p in params}

    def step(self, lr: float) -> None:
        mom = np.float32(self.cfg.momentum)
        wd = np.float32(self.cfg.weight_decay)
        lr = np.float32(lr)
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"grad shape {g.shape} != param shape {p.data.shape} for {p.name}")
            g = g + wd * p.data
            v = self.velocity[p.name]
            v *= mom
            v += g
            p.data = p.data - lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
