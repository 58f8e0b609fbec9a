"""Image quality metrics for fusion results.

Full-reference metrics (PSNR, SSIM, ERGAS, SAM) compare a result against
ground truth on [0, 1] data and average over bands where applicable.  Fusion
metrics (MI, AG, SCD, VIF, Q^AB/F, SF) compare a fused image against its two
sources on luma rescaled to [0, 255], the scale their published constants
assume.

Pinned constants:

* PSNR: peak 1.0, capped at ``PSNR_CAP`` dB when MSE < 1e-10.
* SSIM: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, data range 1,
  population statistics, mean over the window-valid interior.
* ERGAS: 100 / sf * sqrt(mean_b (RMSE_b / mean_b)^2).
* SAM: mean per-pixel spectral angle in degrees; pixels with a zero spectrum
  in either image are skipped.
* MI: 8-bit quantization, 256-bin joint histograms, log base 2.
* AG: mean of sqrt((dx^2 + dy^2) / 2) over forward differences.
* SCD: corr(F - Y, X) + corr(F - X, Y).
* VIF: pixel-domain VIF over 4 scales, noise variance 2, summed over sources.
* Q^AB/F: Sobel edges; Gamma_g = 0.9994, kappa_g = -15, sigma_g = 0.5,
  Gamma_a = 0.9879, kappa_a = -22, sigma_a = 0.8, L = 1.
* SF: sqrt(RF^2 + CF^2) with RF, CF the RMS row and column differences.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import ndimage

from .exceptions import DimensionError
from .validation import as_image, check_same_shape

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])

FULL_REFERENCE = ("psnr", "ssim", "ergas", "sam")
FUSION = ("mi", "ag", "scd", "vif", "qabf", "sf")


def _f64(img, name):
    return as_image(img, name).astype(np.float64)


def psnr(ref, test):
    ref, test = _f64(ref, "reference"), _f64(test, "test")
    check_same_shape(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _ssim_band(a, b, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    truncate = 3.5
    radius = int(truncate * sigma + 0.5)
    if min(a.shape) < 2 * radius + 1:
        raise DimensionError(f"SSIM needs images of at least {2 * radius + 1} pixels per side")
    filt = lambda z: ndimage.gaussian_filter(z, sigma, mode="reflect", truncate=truncate)  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    return float(s[radius:-radius, radius:-radius].mean())


def ssim(ref, test):
    ref, test = _f64(ref, "reference"), _f64(test, "test")
    check_same_shape(ref, test)
    return float(np.mean([_ssim_band(r, t) for r, t in zip(ref, test)]))


def ergas(ref, test, sf=1):
    ref, test = _f64(ref, "reference"), _f64(test, "test")
    check_same_shape(ref, test)
    terms = []
    for b, (r, t) in enumerate(zip(ref, test)):
        mu = r.mean()
        if mu == 0:
            warnings.warn(f"ERGAS: band {b} of the reference has zero mean and is skipped", stacklevel=2)
            continue
        terms.append(np.mean((r - t) ** 2) / mu ** 2)
    if not terms:
        return 0.0
    return float(100.0 / sf * math.sqrt(np.mean(terms)))


def sam(ref, test):
    ref, test = _f64(ref, "reference"), _f64(test, "test")
    check_same_shape(ref, test)
    r = ref.reshape(ref.shape[0], -1)
    t = test.reshape(test.shape[0], -1)
    nr = np.linalg.norm(r, axis=0)
    nt = np.linalg.norm(t, axis=0)
    ok = (nr > 0) & (nt > 0)
    if not ok.any():
        return 0.0
    # 2 * atan2(|u - v|, |u + v|) on unit vectors stays accurate near zero angle.
    u = r[:, ok] / nr[ok]
    v = t[:, ok] / nt[ok]
    angle = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    return float(np.degrees(angle).mean())


def full_reference(ref, test, sf=1):
    """PSNR, SSIM, ERGAS and SAM of ``test`` against ``ref``."""
    return {"psnr": psnr(ref, test), "ssim": ssim(ref, test),
            "ergas": ergas(ref, test, sf), "sam": sam(ref, test)}


# Fusion metrics.

def luma(img):
    """Grayscale in [0, 255]: BT.601 weights for 3 bands, band mean otherwise."""
    img = _f64(img, "image")
    if img.shape[0] == 1:
        g = img[0]
    elif img.shape[0] == 3:
        g = np.tensordot(LUMA, img, axes=(0, 0))
    else:
        g = img.mean(axis=0)
    return 255.0 * g


def _quantize(g):
    return np.clip(np.floor(g + 0.5), 0, 255).astype(np.int64)


def entropy(g, bins=256):
    counts = np.bincount(_quantize(g).ravel(), minlength=bins).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information(a, b, bins=256):
    qa, qb = _quantize(a).ravel(), _quantize(b).ravel()
    joint = np.zeros((bins, bins))
    np.add.at(joint, (qa, qb), 1)
    joint /= joint.sum()
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / np.outer(pa, pb)[nz])))


def average_gradient(g):
    dx = g[:-1, 1:] - g[:-1, :-1]
    dy = g[1:, :-1] - g[:-1, :-1]
    if dx.size == 0:
        return 0.0
    return float(np.mean(np.sqrt((dx ** 2 + dy ** 2) / 2.0)))


def spatial_frequency(g):
    rf = np.sqrt(np.mean(np.diff(g, axis=1) ** 2)) if g.shape[1] > 1 else 0.0
    cf = np.sqrt(np.mean(np.diff(g, axis=0) ** 2)) if g.shape[0] > 1 else 0.0
    return float(math.sqrt(rf ** 2 + cf ** 2))


def _corr(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0:
        warnings.warn("SCD: correlation with a constant image contributes 0", stacklevel=3)
        return 0.0
    return float(np.sum(a * b) / den)


def scd(gx, gy, gf):
    return _corr(gf - gy, gx) + _corr(gf - gx, gy)


def _gauss2d(n, sd):
    x = np.arange(n) - (n - 1) / 2
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sd * sd))
    return g / g.sum()


def _valid_filter(img, win):
    from scipy.signal import correlate2d
    return correlate2d(img, win, mode="valid")


def vif_pixel(ref, dist, sigma_nsq=2.0):
    """Pixel-domain visual information fidelity of ``dist`` relative to ``ref``."""
    eps = 1e-10
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = _gauss2d(n, n / 5.0)
        if scale > 1:
            if min(ref.shape) < n:
                break
            ref = _valid_filter(ref, win)[::2, ::2]
            dist = _valid_filter(dist, win)[::2, ::2]
        if min(ref.shape) < n:
            break
        mu1 = _valid_filter(ref, win)
        mu2 = _valid_filter(dist, win)
        s1 = np.maximum(_valid_filter(ref * ref, win) - mu1 * mu1, 0)
        s2 = np.maximum(_valid_filter(dist * dist, win) - mu2 * mu2, 0)
        s12 = _valid_filter(ref * dist, win) - mu1 * mu2
        g = s12 / (s1 + eps)
        sv = s2 - g * s12
        low1 = s1 < eps
        g[low1] = 0
        sv[low1] = s2[low1]
        s1[low1] = 0
        low2 = s2 < eps
        g[low2] = 0
        sv[low2] = 0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0
        sv = np.maximum(sv, eps)
        num += float(np.sum(np.log10(1 + g * g * s1 / (sv + sigma_nsq))))
        den += float(np.sum(np.log10(1 + s1 / sigma_nsq)))
    if den == 0:
        return 1.0
    return num / den


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _edges(g):
    sx = ndimage.correlate(g, _SOBEL_X, mode="nearest")
    sy = ndimage.correlate(g, _SOBEL_Y, mode="nearest")
    strength = np.hypot(sx, sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        angle = np.where(sx == 0, np.pi / 2, np.arctan(sy / np.where(sx == 0, 1, sx)))
    return strength, angle


def _edge_preservation(ga, aa, gf, af):
    tg, kg, dg = 0.9994, -15.0, 0.5
    ta, ka, da = 0.9879, -22.0, 0.8
    hi = np.maximum(ga, gf)
    G = np.where(hi == 0, 1.0, np.minimum(ga, gf) / np.where(hi == 0, 1, hi))
    A = 1 - np.abs(aa - af) / (np.pi / 2)
    return tg / (1 + np.exp(kg * (G - dg))) * ta / (1 + np.exp(ka * (A - da)))


def qabf(gx, gy, gf):
    ga, aa = _edges(gx)
    gb, ab = _edges(gy)
    g_f, a_f = _edges(gf)
    qa = _edge_preservation(ga, aa, g_f, a_f)
    qb = _edge_preservation(gb, ab, g_f, a_f)
    den = np.sum(ga + gb)
    if den == 0:
        return 0.0
    return float(np.sum(qa * ga + qb * gb) / den)


def fusion_metrics(X, Y, F):
    """MI, AG, SCD, VIF, Q^AB/F and SF of fused image F against sources X and Y."""
    gx, gy, gf = luma(X), luma(Y), luma(F)
    if not gx.shape == gy.shape == gf.shape:
        raise DimensionError(f"fusion metrics need equal sizes, got {gx.shape}, {gy.shape}, {gf.shape}")
    return {
        "mi": mutual_information(gx, gf) + mutual_information(gy, gf),
        "ag": average_gradient(gf),
        "scd": scd(gx, gy, gf),
        "vif": vif_pixel(gx, gf) + vif_pixel(gy, gf),
        "qabf": qabf(gx, gy, gf),
        "sf": spatial_frequency(gf),
    }


def metric_table(report, order=None):
    """Fixed-order two-column text table of a metric report."""
    keys = [k for k in (order or (*FULL_REFERENCE, *FUSION)) if k in report]
    keys += [k for k in report if k not in keys]
    width = max(len(k) for k in keys) if keys else 6
    return "\n".join(f"{k:<{width}}  {report[k]:.6g}" for k in keys)
