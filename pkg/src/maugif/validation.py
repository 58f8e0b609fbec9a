"""Input validation helpers for images and image pairs.

Images are numpy arrays in band-major (C, H, W) layout.  2-D arrays are
accepted as single-band images and promoted to (1, H, W).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DimensionError, NumericError


def as_image(arr, name="image", check_range=False, dtype=np.float32):
    """Return ``arr`` as a finite (C, H, W) float array.

    With ``check_range`` values outside [0, 1] raise ConfigError.
    """
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise DimensionError(f"{name} must be (H, W) or (C, H, W), got shape {a.shape}")
    if min(a.shape) < 1:
        raise DimensionError(f"{name} has an empty dimension: {a.shape}")
    a = a.astype(dtype, copy=False)
    if not np.isfinite(a).all():
        raise NumericError(f"{name} contains NaN or Inf")
    if check_range and (a.min() < 0.0 or a.max() > 1.0):
        raise ConfigError(f"{name} values must lie in [0, 1], got [{a.min():g}, {a.max():g}]")
    return a


def check_same_shape(a, b, names=("reference", "test")):
    if a.shape != b.shape:
        raise DimensionError(f"{names[0]} shape {a.shape} differs from {names[1]} shape {b.shape}")


def check_pair(X, Y, mechanism, sf=None):
    """Validate a source pair for ``mechanism`` and return it as images.

    Additive pairs must share one shape.  Multiplicative pairs need the
    high-resolution Y to be an integer multiple ``sf`` of X spatially; the
    inferred (or checked) ``sf`` is returned as the third element.
    """
    X = as_image(X, "X")
    Y = as_image(Y, "Y")
    if mechanism == "additive":
        check_same_shape(X, Y, ("X", "Y"))
        return X, Y, 1
    _, hx, wx = X.shape
    _, hy, wy = Y.shape
    if hy % hx or wy % wx or hy // hx != wy // wx:
        raise DimensionError(f"Y spatial size {hy}x{wy} is not an integer multiple of X's {hx}x{wx}")
    ratio = hy // hx
    if sf is not None and sf != ratio:
        raise DimensionError(f"scale factor {sf} does not match the pair's ratio {ratio}")
    return X, Y, ratio


def check_probability_like(value, name, lo=0.0, hi=None):
    if not np.isfinite(value) or value < lo or (hi is not None and value > hi):
        bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise ConfigError(f"{name} must be {bound}, got {value}")
    return value
