"""Differentiable primitives.

Every function takes Tensors (python scalars and arrays are promoted to
constants) and returns a Tensor, recording a backward closure when a tape is
active.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError, DimensionError
from .tensor import Tensor, record


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor._result(np.asarray(x, dtype=dtype or np.float32))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a):
    return record(-a.data, (a,), lambda g: (-g,))


def scale(a, c):
    """Multiply by a python scalar."""
    c = float(c)
    return record(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def square(a):
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sum(a):  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return record(a.data.sum(dtype=a.data.dtype).reshape(()), (a,),
                  lambda g: (np.broadcast_to(g, shape).astype(a.dtype),))


def mean(a):
    shape, n = a.shape, a.size
    return record(a.data.mean(dtype=a.data.dtype).reshape(()), (a,),
                  lambda g: (np.broadcast_to(g / n, shape).astype(a.dtype),))


def mse(a, b):
    """Mean of squared elementwise differences."""
    return mean(square(sub(a, b)))


def leaky_relu(a, slope=0.2):
    ad = a.data
    pos = ad > 0
    out = np.where(pos, ad, ad * ad.dtype.type(slope))
    return record(out, (a,), lambda g: (np.where(pos, g, g * slope),))


def softplus(a):
    ad = a.data
    out = np.logaddexp(ad, 0).astype(ad.dtype)
    sig = (1.0 / (1.0 + np.exp(-ad))).astype(ad.dtype)
    return record(out, (a,), lambda g: (g * sig,))


def hard_threshold(a, sigma, straight_through=False):
    """``x if x > sigma else 0`` elementwise.

    The exact derivative is the pass-through mask.  With ``straight_through``
    the gradient passes everywhere, so suppressed entries keep learning.
    """
    ad = a.data
    keep = ad > ad.dtype.type(sigma)
    out = np.where(keep, ad, ad.dtype.type(0))
    if straight_through:
        return record(out, (a,), lambda g: (g,))
    return record(out, (a,), lambda g: (np.where(keep, g, 0).astype(g.dtype),))


def add_channel_bias(x, b):
    """Add a per-channel bias of shape (C,) to an N, C, H, W tensor."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise DimensionError(f"bias shape {b.shape} does not match channels of {x.shape}")
    bd = b.data.reshape(1, -1, 1, 1)
    return record(x.data + bd, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def conv_output_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv output size is not an integer: ({size} + 2*{padding} - {k})/{stride} + 1")
    return span // stride + 1


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation of x (N, Cin, H, W) with w (Cout, Cin, Kh, Kw).

    Zero padding.  Kernels must be odd-sized whenever padding is used; even
    kernels are accepted for unpadded strided decimation.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, kcin, kh, kw = w.shape
    if kcin != cin:
        raise DimensionError(f"kernel expects {kcin} input channels, input has {cin}")
    if stride < 1 or padding < 0:
        raise ConfigError("stride must be >= 1 and padding >= 0")
    if padding and (kh % 2 == 0 or kw % 2 == 0):
        raise ConfigError(f"padded convolution needs odd kernel sizes, got {kh}x{kw}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)

    # Channel-major layout turns every kernel tap into one (Cout, Cin) @ (Cin, ...) product.
    xt = x.data.transpose(1, 0, 2, 3)
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wdata = w.data
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    out = np.zeros((cout, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xt[:, :, i:i + he:stride, j:j + we:stride]
            out += np.tensordot(wdata[:, :, i, j], patch, axes=(1, 0))

    def backward_fn(g):
        gt = g.transpose(1, 0, 2, 3)
        gx = np.zeros_like(xt) if x.requires_grad else None
        gw = np.zeros_like(wdata) if w.requires_grad else None
        gflat = np.ascontiguousarray(gt).reshape(cout, -1)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None), slice(i, i + he, stride), slice(j, j + we, stride))
                if gw is not None:
                    gw[:, :, i, j] = gflat @ np.ascontiguousarray(xt[sl]).reshape(cin, -1).T
                if gx is not None:
                    gx[sl] += np.tensordot(wdata[:, :, i, j].T, gt, axes=(1, 0))
        if gx is not None:
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + wd]
            gx = gx.transpose(1, 0, 2, 3)
        return gx, gw

    return record(out.transpose(1, 0, 2, 3), (x, w), backward_fn)


def conv2d_macs(in_shape, w_shape, stride=1, padding=0):
    """Multiply-accumulate count of one conv2d call (bias excluded)."""
    n, cin, h, wd = in_shape
    cout, _, kh, kw = w_shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    return n * cout * cin * kh * kw * ho * wo
