"""Finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, backward


def numerical_grad(fn, params, h=1e-3):
    """Central differences of scalar ``fn()`` with respect to each parameter's data."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data, dtype=np.float64)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().data)
            flat[i] = old - h
            down = float(fn().data)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradcheck(fn, params, h=1e-3):
    """Norm-wise relative error between reverse-mode and central-difference gradients.

    ``fn`` builds a scalar loss from ``params``; their existing grads are
    overwritten.  Returns ``max_p |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-12)``.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.astype(np.float64) for p in params]
    numeric = numerical_grad(fn, params, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
