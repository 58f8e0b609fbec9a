"""Synthetic source pairs with known ground truth.

Spatial degradation is Gaussian blur followed by decimation at offset 0,
spectral degradation is contiguous band averaging, and sensor noise is
i.i.d. Gaussian calibrated to a target SNR.  Multi-focus pairs gate a blur
with complementary binary masks.  All functions are pure given their seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, DimensionError
from .validation import as_image


def default_kernel_size(sigma):
    return 2 * math.ceil(2 * sigma) + 1


def gaussian_kernel1d(sigma, ksize):
    if ksize < 1 or ksize % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {ksize}")
    r = ksize // 2
    if sigma <= 0:
        k = np.zeros(ksize)
        k[r] = 1.0
        return k
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma, ksize=None):
    """Separable per-channel Gaussian blur with mirrored borders (edge not repeated)."""
    img = as_image(img)
    if ksize is None:
        ksize = max(3, default_kernel_size(sigma))
    if ksize < 3 or ksize % 2 == 0:
        raise ConfigError(f"blur kernel size must be odd and >= 3, got {ksize}")
    k = gaussian_kernel1d(sigma, ksize)
    out = img.astype(np.float64)
    out = ndimage.correlate1d(out, k, axis=1, mode="mirror")
    out = ndimage.correlate1d(out, k, axis=2, mode="mirror")
    return out.astype(np.float32)


def spatial_downsample(img, sf, blur_sigma=None, ksize=None):
    """Blur with sigma ``blur_sigma`` (default sf/2), then keep every sf-th pixel."""
    img = as_image(img)
    if sf < 1:
        raise ConfigError(f"scale factor must be >= 1, got {sf}")
    _, h, w = img.shape
    if h % sf or w % sf:
        raise ConfigError(f"image size {h}x{w} is not divisible by scale factor {sf}")
    sigma = sf / 2 if blur_sigma is None else blur_sigma
    if ksize is None:
        ksize = max(3, default_kernel_size(sigma))
    blurred = gaussian_blur(img, sigma, ksize)
    return np.ascontiguousarray(blurred[:, ::sf, ::sf])


def band_groups(n_bands, groups):
    """Contiguous partition of band indices; the last group takes the remainder."""
    if groups < 1 or groups > n_bands:
        raise ConfigError(f"cannot split {n_bands} bands into {groups} groups")
    size = n_bands // groups
    bounds = [g * size for g in range(groups)] + [n_bands]
    return [list(range(bounds[g], bounds[g + 1])) for g in range(groups)]


def spectral_average(hsi, groups):
    hsi = as_image(hsi)
    parts = band_groups(hsi.shape[0], groups)
    return np.stack([hsi[idx].mean(axis=0) for idx in parts]).astype(np.float32)


def _noisy(img, snr_db, rng):
    if snr_db is None or math.isinf(snr_db):
        return img.copy(), 0.0
    power = float(np.mean(img.astype(np.float64) ** 2))
    if power == 0.0:
        raise ConfigError("SNR is undefined for an all-zero image")
    std = math.sqrt(power / 10 ** (snr_db / 10))
    noisy = img + std * rng.standard_normal(img.shape)
    clipped = float(np.mean((noisy < 0) | (noisy > 1)))
    return np.clip(noisy, 0.0, 1.0).astype(np.float32), clipped


def add_noise_snr(img, snr_db, seed=0):
    """Add zero-mean Gaussian noise with variance mean(img**2) / 10**(snr_db/10).

    ``snr_db`` of None or inf means no noise.  The result is clamped to [0, 1].
    """
    img = as_image(img)
    return _noisy(img, snr_db, np.random.default_rng(seed))[0]


def measured_snr_db(clean, noisy):
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noisy, dtype=np.float64) - clean
    return 10 * math.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


def upsample_cubic(img, sf):
    """Cubic-spline upsampling aligned with offset-0 decimation.

    Output pixel j samples the input at coordinate j / sf, so decimating the
    result at offset 0 gives back the input exactly.
    """
    img = as_image(img)
    if sf == 1:
        return img.copy()
    c, h, w = img.shape
    rows = np.arange(h * sf) / sf
    cols = np.arange(w * sf) / sf
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = np.empty((c, h * sf, w * sf), dtype=np.float32)
    for b in range(c):
        out[b] = ndimage.map_coordinates(img[b].astype(np.float64), [rr, cc], order=3, mode="nearest")
    return out


@dataclass
class DegradationSpec:
    sf: int = 4
    blur_sigma: float | None = None
    kernel_size: int | None = None
    spectral_groups: int = 3
    snr_hsi_db: float | None = 35.0
    snr_msi_db: float | None = 40.0
    seed: int = 0

    def __post_init__(self):
        if self.sf < 1:
            raise ConfigError(f"sf must be >= 1, got {self.sf}")
        if self.kernel_size is not None and self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.spectral_groups < 1:
            raise ConfigError("spectral_groups must be >= 1")

    @property
    def sigma(self):
        return self.sf / 2 if self.blur_sigma is None else self.blur_sigma

    @property
    def ksize(self):
        return self.kernel_size or max(3, default_kernel_size(self.sigma))


@dataclass
class FocusSpec:
    mask: np.ndarray
    blur_sigma: float = 2.0
    seed: int = 0
    kernel_size: int | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if self.mask.ndim != 2:
            raise DimensionError(f"focus mask must be 2-D, got shape {self.mask.shape}")
        if not np.isin(self.mask, (0, 1)).all():
            raise ConfigError("focus mask values must be 0 or 1")
        if self.blur_sigma <= 0:
            raise ConfigError("blur_sigma must be > 0")


@dataclass
class SimPair:
    X: np.ndarray
    Y: np.ndarray
    gt: np.ndarray
    spec: dict = field(default_factory=dict)


def simulate_hmf_pair(gt_hsi, spec):
    """Low-resolution HSI X and 3-band-style MSI Y from a ground-truth cube."""
    gt = as_image(gt_hsi, "gt")
    rng_x = np.random.default_rng([spec.seed, 0])
    rng_y = np.random.default_rng([spec.seed, 1])
    X, clip_x = _noisy(spatial_downsample(gt, spec.sf, spec.sigma, spec.ksize), spec.snr_hsi_db, rng_x)
    Y, clip_y = _noisy(spectral_average(gt, spec.spectral_groups), spec.snr_msi_db, rng_y)
    meta = {"task": "hmf", **asdict(spec), "blur_sigma": spec.sigma, "kernel_size": spec.ksize,
            "clip_fraction_x": clip_x, "clip_fraction_y": clip_y}
    return SimPair(X, Y, gt.copy(), meta)


def simulate_mff_pair(gt, spec):
    """Complementary partially focused pair: X sharp where mask is 1, Y elsewhere."""
    gt = as_image(gt, "gt")
    if spec.mask.shape != gt.shape[1:]:
        raise DimensionError(f"mask shape {spec.mask.shape} does not match image {gt.shape[1:]}")
    blurred = gaussian_blur(gt, spec.blur_sigma, spec.kernel_size)
    m = spec.mask.astype(np.float32)[None]
    X = m * gt + (1 - m) * blurred
    Y = (1 - m) * gt + m * blurred
    meta = {"task": "mff", "blur_sigma": spec.blur_sigma, "seed": spec.seed,
            "kernel_size": spec.kernel_size or max(3, default_kernel_size(spec.blur_sigma)),
            "mask_fraction": float(m.mean())}
    return SimPair(X.astype(np.float32), Y.astype(np.float32), gt.copy(), meta)


def simulate_vif_pair(scene, seed=0, n_targets=3, target_gain=0.5, ir_gain=0.6):
    """Visible/infrared-style pair whose infrared residual is mostly negative.

    Y is the visible scene.  X dims the scene by ``ir_gain`` and adds a few
    hot Gaussian targets, so X - Y is negative except on the targets.  The
    reference is the visible scene with the targets added.
    """
    Y = as_image(scene, "scene")
    _, h, w = Y.shape
    rng = np.random.default_rng(seed)
    hot = np.zeros((h, w))
    rr, cc = np.mgrid[0:h, 0:w]
    for _ in range(n_targets):
        cy, cx = rng.uniform(0.15, 0.85, 2) * (h, w)
        s = rng.uniform(0.04, 0.08) * min(h, w)
        hot += np.exp(-((rr - cy) ** 2 + (cc - cx) ** 2) / (2 * s * s))
    hot = target_gain * np.clip(hot, 0, 1)[None]
    X = np.clip(ir_gain * Y + hot, 0, 1).astype(np.float32)
    gt = np.clip(Y + hot, 0, 1).astype(np.float32)
    meta = {"task": "vif", "seed": seed, "n_targets": n_targets, "target_gain": target_gain,
            "ir_gain": ir_gain}
    return SimPair(X, Y.copy(), gt, meta)


# Synthetic ground-truth generators.

def test_card(size=64, channels=1, seed=0):
    """Gradients, a checkerboard patch, Gaussian blobs and a disk, in [0, 1]."""
    rng = np.random.default_rng(seed)
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    img = 0.25 + 0.3 * xx + 0.15 * yy
    q = max(size // 8, 1)
    cb = ((np.arange(h)[:, None] // q + np.arange(w)[None, :] // q) % 2).astype(float)
    region = (yy > 0.5) & (xx < 0.5)
    img = np.where(region, 0.2 + 0.55 * cb, img)
    for _ in range(3):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        s = rng.uniform(0.05, 0.12)
        amp = rng.uniform(-0.25, 0.3)
        img = img + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    disk = (yy - 0.25) ** 2 + (xx - 0.72) ** 2 < 0.12 ** 2
    img = np.where(disk, 0.9, img)
    img = np.clip(img, 0.02, 0.98)
    if channels == 1:
        return img[None].astype(np.float32)
    tints = np.linspace(0.8, 1.0, channels)[:, None, None]
    return np.clip(img[None] * tints + 0.05 * (1 - tints), 0, 1).astype(np.float32)


def ramped_cube(size=64, bands=8, seed=0):
    """Low-rank hyperspectral cube: three spatial patterns times spectral ramps."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    p1 = test_card(size, 1, seed)[0]
    p2 = 0.5 + 0.5 * np.sin(2 * np.pi * (2 * xx + rng.uniform()))
    p2 *= (0.6 + 0.4 * yy)
    p3 = np.zeros_like(xx)
    for _ in range(4):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        p3 += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.08 ** 2))
    p3 = np.clip(p3, 0, 1)
    t = np.linspace(0.0, 1.0, bands)
    ramps = np.stack([0.3 + 0.6 * t, 0.9 - 0.6 * t, np.exp(-((t - 0.5) / 0.25) ** 2)])
    cube = np.einsum("kb,khw->bhw", ramps, np.stack([p1, p2, p3]))
    cube = cube / cube.max() * 0.95
    return np.clip(cube, 0, 1).astype(np.float32)


def half_mask(height, width, side="left"):
    m = np.zeros((height, width), dtype=np.uint8)
    if side == "left":
        m[:, : width // 2] = 1
    elif side == "right":
        m[:, width // 2:] = 1
    elif side == "top":
        m[: height // 2] = 1
    elif side == "bottom":
        m[height // 2:] = 1
    else:
        raise ConfigError(f"unknown mask side {side!r}")
    return m
