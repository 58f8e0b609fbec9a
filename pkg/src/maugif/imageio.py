"""PNG and MBF image files.

Images in memory are float32 (C, H, W) arrays in [0, 1].  PNGs are read and
written with OpenCV, which handles 16-bit color PNGs losslessly.

MBF layout: the ASCII line ``MBF1 H W C\\n`` followed by H*W*C little-endian
float32 values, band-major (all of band 0, then band 1, ...).
"""

from __future__ import annotations

import os
import warnings

import cv2
import numpy as np

from .exceptions import FormatError
from .validation import as_image

MBF_MAGIC = b"MBF1"
_MAX_HEADER = 64


def _io_error(path, what):
    return OSError(f"{os.fspath(path)}: {what}")


def load_png(path):
    """Read an 8- or 16-bit grayscale or RGB PNG as a (C, H, W) array in [0, 1]."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{os.fspath(path)}: no such file")
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise _io_error(path, "not a readable PNG")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{os.fspath(path)}: unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 2:
        planes = raw[None]
    else:
        if raw.shape[2] in (2, 4):
            warnings.warn(f"{os.fspath(path)}: alpha channel discarded", stacklevel=2)
            raw = raw[:, :, :-1]
        planes = raw[:, :, ::-1].transpose(2, 0, 1) if raw.shape[2] == 3 else raw.transpose(2, 0, 1)
    return (planes.astype(np.float64) / scale).astype(np.float32)


def quantize8(img):
    """Round-half-up to 8 bits after clamping to [0, 1]."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_png(img, path):
    img = as_image(img, "image")
    if img.shape[0] not in (1, 3):
        raise FormatError(f"PNG holds 1 or 3 channels, got {img.shape[0]}; save as MBF instead")
    q = quantize8(img)
    out = q[0] if q.shape[0] == 1 else q[::-1].transpose(1, 2, 0)
    if not cv2.imwrite(os.fspath(path), np.ascontiguousarray(out)):
        raise _io_error(path, "could not write PNG")


def save_mbf(img, path):
    img = as_image(img, "image")
    c, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"%s %d %d %d\n" % (MBF_MAGIC, h, w, c))
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def load_mbf(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    end = buf.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        raise FormatError(f"{os.fspath(path)}: missing MBF header")
    fields = buf[:end].split(b" ")
    if len(fields) != 4 or fields[0] != MBF_MAGIC:
        raise FormatError(f"{os.fspath(path)}: bad MBF header {buf[:end]!r}")
    try:
        h, w, c = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError(f"{os.fspath(path)}: non-numeric MBF dimensions") from None
    if min(h, w, c) < 1:
        raise FormatError(f"{os.fspath(path)}: empty MBF dimensions {h}x{w}x{c}")
    payload = buf[end + 1:]
    expected = 4 * h * w * c
    if len(payload) != expected:
        raise FormatError(f"{os.fspath(path)}: payload length {len(payload)} does not match "
                          f"header ({expected} bytes for {h}x{w}x{c})")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)
    if not np.isfinite(data).all():
        raise FormatError(f"{os.fspath(path)}: payload contains NaN or Inf")
    return data


def load_image(path):
    """Load by extension: ``.mbf`` as MBF, anything else as PNG."""
    if os.fspath(path).lower().endswith(".mbf"):
        return load_mbf(path)
    return load_png(path)


def save_image(img, path):
    if os.fspath(path).lower().endswith(".mbf"):
        save_mbf(img, path)
    else:
        save_png(img, path)
