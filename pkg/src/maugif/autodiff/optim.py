"""AdamW with decoupled weight decay, and the warm-up linear LR schedule."""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import ConfigError, NumericError, UsageError


def lr_schedule(step, total_steps, warmup_steps, lr_max):
    """Piecewise-linear rate: 0 -> lr_max over the warm-up, then lr_max -> 0.

    Out-of-range inputs are clamped rather than rejected.
    """
    total_steps = max(int(total_steps), 1)
    warmup_steps = min(max(int(warmup_steps), 1), total_steps)
    step = min(max(step, 0), total_steps)
    if step <= warmup_steps:
        return lr_max * (step / warmup_steps)
    if total_steps == warmup_steps:
        return lr_max
    return lr_max * ((total_steps - step) / (total_steps - warmup_steps))


class AdamW:
    """AdamW over a list of parameter Tensors; ``t`` counts completed steps."""

    def __init__(self, params, lr_max=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.lr_max = lr_max
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        for p in self.params:
            if p.grad is None:
                raise UsageError(f"parameter {p.name or p.shape} has no gradient")
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {p.name or p.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype)

    def state_summary(self):
        return {"t": self.t, "lr_max": self.lr_max, "betas": (self.beta1, self.beta2),
                "eps": self.eps, "weight_decay": self.weight_decay}


def default_warmup(total_steps, fraction=0.1):
    return max(1, int(math.ceil(fraction * total_steps)))
