"""Unsupervised few-shot training on a single source pair.

The objective is ``loss_1 + lam * loss_2 + loss_d`` where

* ``loss_1 = |E_x(X) - E_y(Y)|^2`` aligns the two latents,
* ``loss_2 = |E_x(X) - X|^2 + |E_y(Y) - Y|^2`` keeps latents faithful to the
  sources (multiplicative mode swaps in ``anchor_weight * |E_x(X) - up(X)|^2``
  because the sources differ in shape),
* ``loss_d = |D_x(E_x(X)) - X|^2 + |D_y(E_y(Y)) - Y|^2`` is reconstruction.

Squared norms are means over batch and pixels.  Encoders and decoders are
optimized jointly with AdamW under a warm-up linear schedule.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Tape, Tensor, backward, default_warmup, lr_schedule
from .degradation import spatial_downsample
from .exceptions import ConfigError, NumericError
from .model import ADDITIVE, MULTIPLICATIVE, PsiSpec, build_model, default_configs, extract_common
from .validation import check_pair

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 1.0
    epochs: int = 50
    batch_size: int = 32
    lr_max: float = 1e-4
    patch_size: int = 32
    steps_per_epoch: int = 16
    seed: int = 0
    mechanism: str = ADDITIVE
    psi: PsiSpec = field(default_factory=PsiSpec)
    warmup_fraction: float = 0.1
    weight_decay: float = 1e-2
    anchor_weight: float = 0.1
    hidden_channels: int = 8
    n_layers: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0, steps_per_epoch and batch_size >= 1")
        if self.lr_max < 0:
            raise ConfigError("lr_max must be >= 0")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if self.mechanism not in (ADDITIVE, MULTIPLICATIVE):
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")


@dataclass
class PatchBatch:
    """Co-located crops; in multiplicative mode X crops sit at (i, j) and Y crops at (sf*i, sf*j)."""

    x: np.ndarray
    y: np.ndarray
    coords: list
    sf: int = 1


LOSS_KEYS = ("loss1", "loss2", "lossd", "total")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    loss1: list = field(default_factory=list)
    loss2: list = field(default_factory=list)
    lossd: list = field(default_factory=list)
    total: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    wall_time: float = 0.0
    steps: int = 0
    alignment: float | None = None

    def append(self, epoch, losses):
        self.epochs.append(epoch)
        for key in LOSS_KEYS:
            getattr(self, key).append(losses[key])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", *LOSS_KEYS])
            for i, epoch in enumerate(self.epochs):
                writer.writerow([epoch, *(f"{getattr(self, k)[i]:.6g}" for k in LOSS_KEYS)])

    def as_dict(self):
        return {"epochs": self.epochs, **{k: getattr(self, k) for k in LOSS_KEYS},
                "initial": self.initial, "wall_time": self.wall_time, "steps": self.steps,
                "alignment": self.alignment}


def sample_patches(X, Y, cfg, rng, sf=1):
    """Draw ``cfg.batch_size`` co-located random crops from one source pair.

    Patch size is measured on the high-resolution frame; in multiplicative
    mode X crops are ``patch_size // sf`` wide.
    """
    p = cfg.patch_size
    _, h, w = Y.shape
    if p > min(h, w):
        raise ConfigError(f"patch size {p} exceeds image size {h}x{w}")
    if p % sf:
        raise ConfigError(f"patch size {p} is not divisible by scale factor {sf}")
    pl = p // sf
    hl, wl = h // sf, w // sf
    ii = rng.integers(0, hl - pl + 1, size=cfg.batch_size)
    jj = rng.integers(0, wl - pl + 1, size=cfg.batch_size)
    xs = np.stack([X[:, i:i + pl, j:j + pl] for i, j in zip(ii, jj)])
    ys = np.stack([Y[:, sf * i:sf * i + p, sf * j:sf * j + p] for i, j in zip(ii, jj)])
    return PatchBatch(xs, ys, list(zip(ii.tolist(), jj.tolist())), sf)


def compute_losses(model, batch, lam):
    """Return a dict of scalar Tensors: loss1, loss2, lossd and total."""
    x = Tensor._result(np.asarray(batch.x, dtype=np.float32))
    y = Tensor._result(np.asarray(batch.y, dtype=np.float32))
    lx = model.enc_x.lift(x)
    cx = model.enc_x.refine(lx)
    cy = model.enc_y(y)
    loss1 = ad.mse(cx, cy)
    if model.mechanism == ADDITIVE:
        loss2 = ad.add(ad.mse(cx, x), ad.mse(cy, y))
        weight = lam
    else:
        loss2 = ad.mse(cx, lx)
        weight = lam * model.meta.get("anchor_weight", 0.1)
    lossd = ad.add(ad.mse(model.dec_x(cx), x), ad.mse(model.dec_y(cy), y))
    total = ad.add(ad.add(loss1, ad.scale(loss2, weight)), lossd)
    return {"loss1": loss1, "loss2": loss2, "lossd": lossd, "total": total}


def evaluate_losses(model, batch, lam):
    losses = compute_losses(model, batch, lam)
    return {k: v.item() for k, v in losses.items()}


def _check_finite(losses, report, where):
    for key, value in losses.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite {key} {where}; aborting training", report=report)


def _lstsq_affine(src, tgt):
    """Affine band map (weight, bias) minimizing |W src + b - tgt|^2 over pixels."""
    s = src.reshape(src.shape[0], -1).astype(np.float64)
    t = tgt.reshape(tgt.shape[0], -1).astype(np.float64)
    design = np.vstack([s, np.ones((1, s.shape[1]))]).T
    sol = np.linalg.lstsq(design, t.T, rcond=None)[0].T
    return sol[:, :-1], sol[:, -1]


def warm_start_spectral(model, X, Y):
    """Least-squares start for the two 1x1 band maps of a multiplicative model.

    E_y's head is fitted to predict X from Y decimated to X's grid, and D_y's
    projection to predict that decimated Y from X.  Both are the closed-form
    minimizers of the matching loss terms for a linear map at initialization.
    """
    y_low = spatial_downsample(Y, model.sf)
    w, b = _lstsq_affine(y_low, X)
    model.enc_y.head.weight.data[:] = w[:, :, None, None]
    model.enc_y.head.bias.data[:] = b
    w, b = _lstsq_affine(X, y_low)
    model.dec_y.proj.weight.data[:] = w[:, :, None, None]
    model.dec_y.proj.bias.data[:] = b
    model.meta["warm_start"] = "spectral-lstsq"


def init_model(X, Y, cfg, sf=1):
    cfg_x, cfg_y = default_configs(cfg.mechanism, X.shape[0], Y.shape[0], cfg.hidden_channels,
                                   cfg.n_layers, cfg.kernel_size)
    model = build_model(cfg.mechanism, cfg_x, cfg_y, cfg.psi, seed=cfg.seed, sf=sf)
    model.meta["anchor_weight"] = cfg.anchor_weight
    if cfg.mechanism == MULTIPLICATIVE:
        warm_start_spectral(model, X, Y)
    return model


def train(X, Y, cfg, model=None, progress=None):
    """Train a model on one source pair; returns (model, TrainReport).

    The per-epoch losses are measured on one fixed evaluation batch drawn
    before training.  ``progress(epoch, losses)`` is called after each epoch.
    """
    X, Y, sf = check_pair(X, Y, cfg.mechanism)
    if model is None:
        model = init_model(X, Y, cfg, sf)
    rng = np.random.default_rng([cfg.seed, 1])
    eval_batch = sample_patches(X, Y, cfg, np.random.default_rng([cfg.seed, 2]), sf)
    report = TrainReport()
    report.initial = evaluate_losses(model, eval_batch, cfg.lam)
    _check_finite(report.initial, report, "before training")

    total_steps = cfg.epochs * cfg.steps_per_epoch
    warmup = default_warmup(total_steps, cfg.warmup_fraction) if total_steps else 0
    opt = AdamW(model.parameters(), lr_max=cfg.lr_max, weight_decay=cfg.weight_decay)
    start = time.perf_counter()
    step = 0
    model.set_training(True)
    try:
        for epoch in range(1, cfg.epochs + 1):
            for _ in range(cfg.steps_per_epoch):
                batch = sample_patches(X, Y, cfg, rng, sf)
                opt.zero_grad()
                with Tape() as tape:
                    losses = compute_losses(model, batch, cfg.lam)
                total = losses["total"]
                if not np.isfinite(total.data).all():
                    tape.clear()
                    raise NumericError(f"non-finite loss at step {step + 1}; aborting training",
                                       report=report)
                backward(total, tape)
                step += 1
                opt.step(lr_schedule(step, total_steps, warmup, cfg.lr_max))
            model.set_training(False)
            losses = evaluate_losses(model, eval_batch, cfg.lam)
            model.set_training(True)
            _check_finite(losses, report, f"at epoch {epoch}")
            report.append(epoch, losses)
            logger.debug("epoch %d: %s", epoch, losses)
            if progress is not None:
                progress(epoch, losses)
    finally:
        model.set_training(False)
        report.steps = step
        report.wall_time = time.perf_counter() - start
    report.alignment = extract_common(model, X, Y).alignment
    model.meta["trained_steps"] = step
    return model, report
