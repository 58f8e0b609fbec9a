"""End-to-end fusion runs: obtain a pair, train, fuse, evaluate, export.

The output directory holds

* ``F.png`` / ``F.mbf``: the fused image (PNG previews of cubes with more
  than three bands average the bands into three groups),
* ``common.png``: the mean common content,
* ``delta_x.png``, ``delta_y.png``: min-max normalized modality features,
* ``psi_delta_x.png``: the gated feature the fusion injected,
* raw ``*.mbf`` copies of the feature maps,
* ``metrics.csv`` (``image,metric,value``), ``losses.csv``, ``model.maug``,
* ``report.json``: settings, costs, metrics and the file list,
* ``timings.json``: wall times, kept apart so everything else is
  byte-identical across repeated runs with the same seed.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

import cv2
import numpy as np

from . import imageio, metrics
from .degradation import (
    DegradationSpec,
    FocusSpec,
    SimPair,
    band_groups,
    half_mask,
    ramped_cube,
    simulate_hmf_pair,
    simulate_mff_pair,
    simulate_vif_pair,
    spectral_average,
    test_card,
    upsample_cubic,
)
from .exceptions import ConfigError, MaugifError
from .model import (
    ADDITIVE,
    HARD_THRESHOLD,
    IDENTITY,
    MULTIPLICATIVE,
    PsiSpec,
    fuse,
    fuse_macs,
    modality_feature,
    save_checkpoint,
)
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

TASKS = ("hmf", "vif", "mff", "mef")
MECHANISM_OF = {"hmf": MULTIPLICATIVE, "vif": ADDITIVE, "mff": ADDITIVE, "mef": ADDITIVE}
VIF_SIGMA = 0.2


def default_psi(task):
    return PsiSpec(HARD_THRESHOLD, VIF_SIGMA) if task == "vif" else PsiSpec(IDENTITY)


@dataclass
class TaskSpec:
    """One fusion run.

    Without ``x_path``/``y_path`` a synthetic pair for ``task`` is simulated
    from ``size`` and ``seed``.  ``psi`` defaults by task; the mechanism is
    fixed by task.  ``seed`` overrides ``train.seed``.  Wall-clock timings
    are only written to ``timings.json`` when ``write_timings`` is set, so a
    default output directory is byte-for-byte reproducible.
    """

    task: str = "mff"
    train: TrainConfig | None = None
    psi: PsiSpec | None = None
    x_path: str | None = None
    y_path: str | None = None
    gt_path: str | None = None
    output_dir: str | None = None
    size: int = 64
    seed: int = 0
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    focus_sigma: float = 2.0
    direction: str = "x"
    write_timings: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if (self.x_path is None) != (self.y_path is None):
            raise ConfigError("give both source paths or neither")
        if self.direction not in ("x", "y"):
            raise ConfigError(f"direction must be 'x' or 'y', got {self.direction!r}")
        psi = self.psi or (self.train.psi if self.train and self.train.psi.kind != IDENTITY
                           else default_psi(self.task))
        if self.mechanism == MULTIPLICATIVE and psi.kind != IDENTITY:
            raise ConfigError("psi gating applies to additive tasks only")
        self.psi = psi
        self.train = replace(self.train or TrainConfig(), mechanism=self.mechanism, psi=psi,
                             seed=self.seed)

    @property
    def mechanism(self):
        return MECHANISM_OF[self.task]

    @property
    def simulated(self):
        return self.x_path is None

    def as_dict(self, portable=False):
        """Fields as plain data; ``portable`` drops the output location and timing switch."""
        d = asdict(self)
        d["mechanism"] = self.mechanism
        if portable:
            d.pop("output_dir")
            d.pop("write_timings")
        return d


@dataclass
class PipelineResult:
    F: np.ndarray
    common: object
    feat_x: object
    feat_y: object
    metrics: dict
    timings: dict
    params: int
    flops: int
    model: object = None
    train_report: object = None
    pair: SimPair | None = None
    files: list = field(default_factory=list)


def simulate_task(task, size=64, seed=0, degradation=None, focus_sigma=2.0):
    """Synthetic pair with ground truth for ``task``.

    MEF reuses the structural/functional construction of the VIF pair with a
    darker functional source.
    """
    if task == "hmf":
        spec = replace(degradation or DegradationSpec(), seed=seed)
        return simulate_hmf_pair(ramped_cube(size, 8, seed), spec)
    if task == "mff":
        gt = test_card(size, 1, seed)
        return simulate_mff_pair(gt, FocusSpec(half_mask(size, size), focus_sigma, seed))
    if task == "vif":
        return simulate_vif_pair(test_card(size, 1, seed), seed)
    if task == "mef":
        pair = simulate_vif_pair(test_card(size, 1, seed), seed, ir_gain=0.3, target_gain=0.6)
        pair.spec["task"] = "mef"
        return pair
    raise ConfigError(f"unknown task {task!r}")


def _to_luma(img):
    ycc = cv2.cvtColor(np.ascontiguousarray(img.transpose(1, 2, 0)), cv2.COLOR_RGB2YCrCb)
    return ycc[:, :, :1].transpose(2, 0, 1).copy(), ycc


def _from_luma(luma, ycc):
    ycc = ycc.copy()
    ycc[:, :, 0] = luma[0]
    return cv2.cvtColor(ycc, cv2.COLOR_YCrCb2RGB).transpose(2, 0, 1).astype(np.float32)


class _Stage:
    """Label errors raised inside a pipeline stage with the stage name."""

    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.start
        if exc is not None and isinstance(exc, (MaugifError, OSError)) and exc.args:
            if isinstance(exc.args[0], str) and not getattr(exc, "stage", None):
                exc.args = (f"[{self.name}] {exc.args[0]}", *exc.args[1:])
                exc.stage = self.name
        return False


def count_cost(model, shape_x, shape_y=None, repeats=10, direction="x"):
    """Parameters, FLOPs (2 x MACs) and median wall time of one fuse call."""
    shape_y = shape_y or shape_x
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, shape_x).astype(np.float32)
    Y = rng.uniform(0, 1, shape_y).astype(np.float32)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fuse(model, X, Y, direction)
        times.append(1e3 * (time.perf_counter() - t0))
    macs = fuse_macs(model, shape_x, shape_y, direction)
    return {"params": model.n_params, "macs": macs, "flops": 2 * macs,
            "fuse_time_ms": statistics.median(times) if times else None}


def _preview(img):
    """Three-or-fewer-band copy for PNG export."""
    return img if img.shape[0] in (1, 3) else spectral_average(img, 3)


def _normalized(img):
    lo, hi = float(img.min()), float(img.max())
    return np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)


def evaluate(pair_x, pair_y, F, gt=None, mechanism=ADDITIVE, sf=1):
    """Metric rows (image, metric, value) for a fused result and its baselines."""
    rows = []
    if gt is not None:
        for k, v in metrics.full_reference(gt, np.clip(F, 0, 1), sf).items():
            rows.append(("F", k, v))
        if mechanism == MULTIPLICATIVE:
            up = np.clip(upsample_cubic(pair_x, sf), 0, 1)
            for k, v in metrics.full_reference(gt, up, sf).items():
                rows.append(("upsampled_x", k, v))
            if pair_y.shape[0] <= gt.shape[0]:
                rep = naive_spectral_expand(pair_y, gt.shape[0])
                for k, v in metrics.full_reference(gt, rep, sf).items():
                    rows.append(("expanded_y", k, v))
    if mechanism == ADDITIVE:
        for k, v in metrics.fusion_metrics(pair_x, pair_y, np.clip(F, 0, 1)).items():
            rows.append(("F", k, v))
    return rows


def naive_spectral_expand(msi, bands):
    """Give every hyperspectral band the value of the MSI band covering it."""
    groups = band_groups(bands, msi.shape[0])
    out = np.empty((bands, *msi.shape[1:]), dtype=np.float32)
    for g, idx in enumerate(groups):
        out[idx] = msi[g]
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def run_task(spec, progress=None):
    """Run ``spec`` end to end and return a :class:`PipelineResult`."""
    timings = {}
    gt = None
    pair = None
    with _Stage("load", timings):
        if spec.simulated:
            pair = simulate_task(spec.task, spec.size, spec.seed, spec.degradation, spec.focus_sigma)
            X, Y, gt = pair.X, pair.Y, pair.gt
        else:
            X = imageio.load_image(spec.x_path)
            Y = imageio.load_image(spec.y_path)
            gt = imageio.load_image(spec.gt_path) if spec.gt_path else None

    color = None
    if spec.mechanism == ADDITIVE and X.shape[0] != Y.shape[0]:
        # Gray + color sources fuse on luma; chroma comes from the color source.
        if sorted((X.shape[0], Y.shape[0])) != [1, 3]:
            raise ConfigError(f"cannot fuse {X.shape[0]}- and {Y.shape[0]}-channel sources")
        if X.shape[0] == 3:
            X, color = _to_luma(X)
        else:
            Y, color = _to_luma(Y)

    with _Stage("train", timings):
        model, report = train(X, Y, spec.train, progress=progress)

    with _Stage("fuse", timings):
        result = fuse(model, X, Y, spec.direction)

    F = result.F if color is None else _from_luma(result.F, color)
    feat = result.feat_x if spec.direction == "x" else result.feat_y
    other = "y" if spec.direction == "x" else "x"

    with _Stage("eval", timings):
        if color is None:
            rows = evaluate(X, Y, F, gt, spec.mechanism, model.sf)
        else:
            rows = evaluate(X, Y, result.F, None, spec.mechanism)
            if gt is not None:
                rows += [("F", k, v) for k, v in metrics.full_reference(gt, np.clip(F, 0, 1)).items()]
        cost = count_cost(model, X.shape, Y.shape, repeats=0, direction=spec.direction)

    metric_map = {f"{img}.{m}" if img != "F" else m: v for img, m, v in rows}
    files = []
    if spec.output_dir:
        with _Stage("export", timings):
            out = spec.output_dir
            os.makedirs(out, exist_ok=True)

            def put(name, img, save):
                path = os.path.join(out, name)
                save(img, path)
                files.append(name)

            put("F.png", _preview(np.clip(F, 0, 1)), imageio.save_png)
            put("F.mbf", F, imageio.save_mbf)
            put("common.png", _preview(np.clip(result.common.c_mean, 0, 1)), imageio.save_png)
            if feat is None:
                src = X if spec.direction == "x" else Y
                feat = modality_feature(model, spec.direction, src)
            other_feat = modality_feature(model, other, Y if other == "y" else X)
            d_main, d_other = f"delta_{spec.direction}", f"delta_{other}"
            put(f"{d_main}.png", _preview(_normalized(feat.delta)), imageio.save_png)
            put(f"{d_main}.mbf", feat.delta, imageio.save_mbf)
            put(f"psi_{d_main}.png", _preview(_normalized(feat.thresholded)), imageio.save_png)
            put(f"psi_{d_main}.mbf", feat.thresholded, imageio.save_mbf)
            put(f"{d_other}.png", _preview(_normalized(other_feat.delta)), imageio.save_png)
            put(f"{d_other}.mbf", other_feat.delta, imageio.save_mbf)

            with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["image", "metric", "value"])
                for img, m, v in rows:
                    writer.writerow([img, m, f"{v:.6g}"])
            files.append("metrics.csv")
            report.to_csv(os.path.join(out, "losses.csv"))
            files.append("losses.csv")
            save_checkpoint(model, os.path.join(out, "model.maug"))
            files.append("model.maug")
            files.append("report.json")
            if spec.write_timings:
                files.append("timings.json")
            _write_json(os.path.join(out, "report.json"), {
                "spec": spec.as_dict(portable=True),
                "shapes": {"x": list(X.shape), "y": list(Y.shape), "f": list(F.shape)},
                "params": cost["params"], "macs": cost["macs"], "flops": cost["flops"],
                "train": {"steps": report.steps, "initial": report.initial,
                          "final": {k: getattr(report, k)[-1] for k in ("loss1", "loss2", "lossd", "total")}
                          if report.epochs else None,
                          "alignment": report.alignment},
                "metrics": metric_map,
                "simulation": pair.spec if pair is not None else None,
                "files": sorted(files),
            })
        if spec.write_timings:
            _write_json(os.path.join(out, "timings.json"), {k: round(v, 6) for k, v in timings.items()})

    return PipelineResult(F=F, common=result.common, feat_x=result.feat_x, feat_y=result.feat_y,
                          metrics=metric_map, timings=timings, params=cost["params"],
                          flops=cost["flops"], model=model, train_report=report, pair=pair,
                          files=files)
