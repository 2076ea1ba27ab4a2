"""Adam with decoupled weight decay, learning-rate schedules and gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        for name, p in self.named_params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for (_, p), m, v in zip(self.named_params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping. ``max_norm=None`` disables clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


SCHEDULES = ("constant", "cosine", "onecycle", "plateau")


@dataclass
class LrSchedule:
    kind: str
    base_lr: float
    total_steps: int = 1
    min_lr: float | None = None
    warmup_fraction: float = 0.3
    div_factor: float = 25.0
    patience: int = 5
    factor: float = 0.5
    _scale: float = field(default=1.0, repr=False)
    _best: float = field(default=math.inf, repr=False)
    _bad_epochs: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.base_lr <= 0:
            raise ValueError("base learning rate must be positive")
        if self.min_lr is None:
            self.min_lr = self.base_lr / 100.0

    def lr_at(self, step):
        if self.kind == "constant":
            return self.base_lr
        if self.kind == "plateau":
            return self.base_lr * self._scale
        T = max(self.total_steps, 1)
        t = min(max(step, 0), T)
        if self.kind == "cosine":
            return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * t / T))
        lo = self.base_lr / self.div_factor
        warm = self.warmup_fraction * T
        if t <= warm:
            return lo + (self.base_lr - lo) * (t / warm if warm > 0 else 1.0)
        frac = (t - warm) / (T - warm)
        return lo + 0.5 * (self.base_lr - lo) * (1.0 + math.cos(math.pi * frac))

    def observe(self, metric):
        """Feed the end-of-epoch monitored value (lower is better) to the plateau rule."""
        if self.kind != "plateau":
            return
        if metric < self._best:
            self._best = metric
            self._bad_epochs = 0
        else:
            self._bad_epochs += 1
            if self._bad_epochs >= self.patience:
                self._scale *= self.factor
                self._bad_epochs = 0


def lr_at(schedule, step, metric=None):
    if metric is not None:
        schedule.observe(metric)
    return schedule.lr_at(step)
