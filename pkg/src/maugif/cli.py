"""Command-line interface: simulate, train, fuse, eval, inspect, bench.

Every option comes from one table, which builds both the parser and the
``--help`` text.  ``--config FILE`` reads a JSON object whose keys are option
names (``lam``, ``steps_per_epoch``, ...); flags given on the command line
override it and unknown keys are rejected.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file-format
error, 3 numeric failure such as a non-finite training loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import imageio, metrics
from .degradation import DegradationSpec
from .exceptions import FormatError, MaugifError, NumericError, StateError, UsageError
from .model import PsiSpec, build_model, default_configs, fuse, load_checkpoint, save_checkpoint
from .pipeline import TASKS, VIF_SIGMA, TaskSpec, count_cost, default_psi, run_task, simulate_task
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

_train_defaults = TrainConfig()

# name -> (type, default, help); shared by every subcommand that trains.
TASK_OPTIONS = {
    "task": (str, "mff", f"fusion task, one of {', '.join(TASKS)}"),
    "seed": (int, 0, "seed for simulation and training"),
    "size": (int, 64, "side of simulated images"),
    "lam": (float, _train_defaults.lam, "weight of the faithfulness loss"),
    "epochs": (int, _train_defaults.epochs, "training epochs"),
    "batch_size": (int, _train_defaults.batch_size, "patches per step"),
    "lr_max": (float, _train_defaults.lr_max, "peak learning rate"),
    "patch_size": (int, _train_defaults.patch_size, "training patch side on the high-resolution grid"),
    "steps_per_epoch": (int, _train_defaults.steps_per_epoch, "optimizer steps per epoch"),
    "psi": (str, None, "gate: identity or hard (default by task)"),
    "sigma": (float, VIF_SIGMA, "hard-threshold level in [0, 0.4]"),
    "hidden_channels": (int, _train_defaults.hidden_channels, "hidden conv width"),
    "direction": (str, "x", "inject x into y (x) or y into x (y)"),
    "sf": (int, 4, "HMF spatial scale factor"),
    "blur_sigma": (float, None, "HMF blur sigma (default sf/2)"),
    "spectral_groups": (int, 3, "HMF multispectral band count"),
    "snr_hsi": (float, 35.0, "HMF hyperspectral SNR in dB (inf: no noise)"),
    "snr_msi": (float, 40.0, "HMF multispectral SNR in dB (inf: no noise)"),
    "focus_sigma": (float, 2.0, "MFF defocus blur sigma"),
}

SUBCOMMAND_OPTIONS = {
    "simulate": ("task", "seed", "size", "sf", "blur_sigma", "spectral_groups", "snr_hsi",
                 "snr_msi", "focus_sigma"),
    "train": tuple(TASK_OPTIONS),
    "fuse": tuple(TASK_OPTIONS),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_table_options(p, names):
    group = p.add_argument_group("settings (also accepted as --config keys)")
    for name in names:
        typ, default, text = TASK_OPTIONS[name]
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ,
                           default=argparse.SUPPRESS, help=f"{text} (default: {default})")
    p.add_argument("--config", help="JSON file of settings; flags override it")


def build_parser():
    parser = _Parser(prog="maugif", description="Unsupervised general image fusion with "
                     "dual cross-image autoencoders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic (X, Y, gt) triple")
    p.add_argument("--out", required=True, help="output directory")
    _add_table_options(p, SUBCOMMAND_OPTIONS["simulate"])

    p = sub.add_parser("train", help="train on one source pair and save a checkpoint")
    p.add_argument("--x", required=True, help="first source (PNG or MBF)")
    p.add_argument("--y", required=True, help="second source (PNG or MBF)")
    p.add_argument("--out", required=True, help="output directory")
    _add_table_options(p, SUBCOMMAND_OPTIONS["train"])

    p = sub.add_parser("fuse", help="train on a pair, fuse it and export all artifacts")
    p.add_argument("--x", help="first source (required unless --simulate)")
    p.add_argument("--y", help="second source (required unless --simulate)")
    p.add_argument("--gt", help="optional reference image for full-reference metrics")
    p.add_argument("--simulate", action="store_true", help="use a synthetic pair for --task")
    p.add_argument("--model", help="fuse with this checkpoint instead of training")
    p.add_argument("--timings", action="store_true",
                   help="also write per-phase wall times to timings.json (not reproducible)")
    p.add_argument("--out", required=True, help="output directory")
    _add_table_options(p, SUBCOMMAND_OPTIONS["fuse"])

    p = sub.add_parser("eval", help="print metrics of a fused image")
    p.add_argument("--f", required=True, help="fused image")
    p.add_argument("--x", help="first source (for fusion metrics)")
    p.add_argument("--y", help="second source (for fusion metrics)")
    p.add_argument("--gt", help="reference (for full-reference metrics)")
    p.add_argument("--sf", type=int, default=1, help="scale factor for ERGAS (default: 1)")
    p.add_argument("--csv", help="append rows to this CSV (header image,metric,value)")
    p.add_argument("--image-id", default=None, help="image column for --csv (default: F path)")

    p = sub.add_parser("inspect", help="describe a checkpoint or image file")
    p.add_argument("path", help=".maug checkpoint, .mbf or .png file")

    p = sub.add_parser("bench", help="parameter, FLOP and CPU timing report")
    p.add_argument("--height", type=int, default=480, help="input height (default: 480)")
    p.add_argument("--width", type=int, default=640, help="input width (default: 640)")
    p.add_argument("--channels", type=int, default=1, help="source channels (default: 1)")
    p.add_argument("--repeats", type=int, default=10, help="timed fuse calls (default: 10)")
    p.add_argument("--seed", type=int, default=0, help="model seed (default: 0)")
    return parser


def resolve_settings(args, command):
    """Defaults, then the config file, then explicit flags."""
    names = SUBCOMMAND_OPTIONS[command]
    settings = {n: TASK_OPTIONS[n][1] for n in names}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(cfg) - set(names))
        if unknown:
            raise UsageError(f"{args.config}: unknown keys for '{command}': {', '.join(unknown)}")
        for key, value in cfg.items():
            typ = TASK_OPTIONS[key][0]
            try:
                settings[key] = None if value is None else typ(value)
            except (TypeError, ValueError):
                raise UsageError(f"{args.config}: bad value for {key}: {value!r}") from None
    for name in names:
        if name in vars(args):
            settings[name] = getattr(args, name)
    return settings


def _none_if_inf(v):
    return None if v is None or math.isinf(v) else v


def _degradation(s):
    return DegradationSpec(sf=s["sf"], blur_sigma=s["blur_sigma"], spectral_groups=s["spectral_groups"],
                           snr_hsi_db=_none_if_inf(s["snr_hsi"]), snr_msi_db=_none_if_inf(s["snr_msi"]),
                           seed=s["seed"])


def _psi(s):
    if s["psi"] is None:
        return default_psi(s["task"])
    return PsiSpec(s["psi"], s["sigma"] if s["psi"] != "identity" else 0.2)


def _task_spec(s, **paths):
    cfg = TrainConfig(lam=s["lam"], epochs=s["epochs"], batch_size=s["batch_size"],
                      lr_max=s["lr_max"], patch_size=s["patch_size"],
                      steps_per_epoch=s["steps_per_epoch"], hidden_channels=s["hidden_channels"])
    return TaskSpec(task=s["task"], train=cfg, psi=_psi(s), size=s["size"], seed=s["seed"],
                    degradation=_degradation(s), focus_sigma=s["focus_sigma"],
                    direction=s["direction"], **paths)


def _progress(verbose):
    if not verbose:
        return None
    return lambda epoch, losses: print(f"epoch {epoch}: " + " ".join(
        f"{k}={v:.4g}" for k, v in losses.items()), file=sys.stderr)


def cmd_simulate(args, s):
    if s["task"] not in TASKS:
        raise UsageError(f"--task must be one of {TASKS}")
    pair = simulate_task(s["task"], s["size"], s["seed"], _degradation(s), s["focus_sigma"])
    os.makedirs(args.out, exist_ok=True)
    for name, img in (("X", pair.X), ("Y", pair.Y), ("gt", pair.gt)):
        imageio.save_mbf(img, os.path.join(args.out, f"{name}.mbf"))
        if img.shape[0] in (1, 3):
            imageio.save_png(img, os.path.join(args.out, f"{name}.png"))
    with open(os.path.join(args.out, "spec.json"), "w") as fh:
        json.dump(pair.spec, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote X {pair.X.shape}, Y {pair.Y.shape}, gt {pair.gt.shape} to {args.out}")
    return EXIT_OK


def cmd_train(args, s):
    spec = _task_spec(s)
    X, Y = imageio.load_image(args.x), imageio.load_image(args.y)
    model, report = train(X, Y, spec.train, progress=_progress(args.verbose))
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(model, os.path.join(args.out, "model.maug"))
    report.to_csv(os.path.join(args.out, "losses.csv"))
    print(f"trained {report.steps} steps in {report.wall_time:.1f} s; "
          f"final total loss {report.total[-1] if report.total else float('nan'):.4g}")
    return EXIT_OK


def cmd_fuse(args, s):
    if not args.simulate:
        for flag in ("x", "y"):
            if getattr(args, flag) is None:
                raise UsageError(f"fuse: --{flag} is required unless --simulate is given")
    if args.model:
        model = load_checkpoint(args.model)
        X, Y = imageio.load_image(args.x), imageio.load_image(args.y)
        result = fuse(model, X, Y, s["direction"])
        os.makedirs(args.out, exist_ok=True)
        imageio.save_mbf(result.F, os.path.join(args.out, "F.mbf"))
        if result.F.shape[0] in (1, 3):
            imageio.save_png(result.F, os.path.join(args.out, "F.png"))
        print(f"fused with {args.model} into {args.out}")
        return EXIT_OK
    paths = {} if args.simulate else {"x_path": args.x, "y_path": args.y, "gt_path": args.gt}
    spec = _task_spec(s, output_dir=args.out, write_timings=args.timings, **paths)
    result = run_task(spec, progress=_progress(args.verbose))
    print(metrics.metric_table(result.metrics))
    print(f"wrote {len(result.files)} files to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    F = imageio.load_image(args.f)
    report = {}
    if args.gt:
        report.update(metrics.full_reference(imageio.load_image(args.gt), np.clip(F, 0, 1), args.sf))
    if args.x and args.y:
        X, Y = imageio.load_image(args.x), imageio.load_image(args.y)
        report.update(metrics.fusion_metrics(X, Y, np.clip(F, 0, 1)))
    elif args.x or args.y:
        raise UsageError("eval: give both --x and --y for fusion metrics")
    if not report:
        raise UsageError("eval: nothing to compute; give --gt and/or --x with --y")
    print(metrics.metric_table(report))
    if args.csv:
        fresh = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        with open(args.csv, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(["image", "metric", "value"])
            image_id = args.image_id or args.f
            for key in (*metrics.FULL_REFERENCE, *metrics.FUSION):
                if key in report:
                    writer.writerow([image_id, key, f"{report[key]:.6g}"])
    return EXIT_OK


def cmd_inspect(args):
    path = args.path
    if path.lower().endswith(".maug"):
        model = load_checkpoint(path)
        print(f"mechanism   {model.mechanism}")
        print(f"psi         {model.psi.kind} (sigma {model.psi.sigma:g})")
        print(f"scale       {model.sf}")
        print(f"params      {model.n_params}")
        for name, p in model.named_parameters().items():
            print(f"  {name:<28} {'x'.join(map(str, p.shape))}")
        return EXIT_OK
    img = imageio.load_image(path)
    c, h, w = img.shape
    print(f"shape       {c}x{h}x{w} (C x H x W)")
    print(f"range       [{img.min():.6g}, {img.max():.6g}]")
    print(f"mean        {img.mean():.6g}")
    return EXIT_OK


def cmd_bench(args):
    shape = (args.channels, args.height, args.width)
    cfg_x, cfg_y = default_configs("additive", args.channels, args.channels)
    model = build_model("additive", cfg_x, cfg_y, PsiSpec(), seed=args.seed)
    cost = count_cost(model, shape, shape, repeats=args.repeats)
    print(f"input       {args.channels}x{args.height}x{args.width}, additive fuse")
    print(f"params      {cost['params']} ({cost['params'] / 1e6:.5f} M)")
    print(f"flops       {cost['flops']} ({cost['flops'] / 1e9:.3f} G, 1 MAC = 2 FLOPs)")
    print(f"time        {cost['fuse_time_ms']:.1f} ms (median of {args.repeats}; single-process CPU, "
          "not comparable to published GPU timings)")
    return EXIT_OK


def run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command in SUBCOMMAND_OPTIONS:
        settings = resolve_settings(args, args.command)
        handler = {"simulate": cmd_simulate, "train": cmd_train, "fuse": cmd_fuse}[args.command]
        return handler(args, settings)
    return {"eval": cmd_eval, "inspect": cmd_inspect, "bench": cmd_bench}[args.command](args)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MaugifError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
