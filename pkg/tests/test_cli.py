import json
import os

import numpy as np
import pytest

from maugif import cli, imageio
from maugif.exceptions import NumericError

pytestmark = pytest.mark.filterwarnings("ignore:SCD")

FAST = ["--epochs", "2", "--steps-per-epoch", "2", "--batch-size", "4"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--task", "mff", "--out", str(out)]) == 0
    return out


def test_no_args_prints_help(capsys):
    assert cli.main([]) == 0
    assert "simulate" in capsys.readouterr().out


def test_fuse_help(capsys):
    assert cli.main(["fuse", "--help"]) == 0
    text = capsys.readouterr().out
    assert "usage:" in text
    for name in cli.TASK_OPTIONS:
        assert f"--{name.replace('_', '-')}" in text


def test_missing_x_is_usage_error(capsys, tmp_path):
    assert cli.main(["fuse", "--y", "y.png", "--out", str(tmp_path)]) == 1
    assert "--x" in capsys.readouterr().err


def test_missing_required_flag_names_it(capsys):
    assert cli.main(["train", "--y", "y.png", "--out", "o"]) == 1
    err = capsys.readouterr().err
    assert "--x" in err


def test_unknown_subcommand(capsys):
    assert cli.main(["explode"]) == 1


def test_simulate_writes_pair(sim_dir):
    names = set(os.listdir(sim_dir))
    assert {"X.mbf", "Y.mbf", "gt.mbf", "X.png", "spec.json"} <= names
    assert imageio.load_mbf(sim_dir / "X.mbf").shape == (1, 64, 64)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lam": 0.5, "epochs": 7, "task": "vif"}))
    args = cli.build_parser().parse_args(["fuse", "--simulate", "--out", "o", "--config", str(cfg),
                                          "--epochs", "3"])
    s = cli.resolve_settings(args, "fuse")
    assert s["lam"] == 0.5
    assert s["epochs"] == 3
    assert s["task"] == "vif"
    assert s["batch_size"] == cli.TASK_OPTIONS["batch_size"][1]


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lamda": 0.5}))
    assert cli.main(["fuse", "--simulate", "--out", str(tmp_path), "--config", str(cfg)]) == 1
    assert "lamda" in capsys.readouterr().err


def test_config_bad_json_is_format_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{lam: ")
    assert cli.main(["fuse", "--simulate", "--out", str(tmp_path), "--config", str(cfg)]) == 2


def test_missing_input_is_io_error(tmp_path, capsys):
    code = cli.main(["fuse", "--x", str(tmp_path / "nope.png"), "--y", str(tmp_path / "nope2.png"),
                     "--out", str(tmp_path / "o"), *FAST])
    assert code == 2
    assert "nope.png" in capsys.readouterr().err


def test_numeric_failure_exit_code(sim_dir, tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise NumericError("non-finite loss at step 1")

    monkeypatch.setattr(cli, "train", diverge)
    code = cli.main(["train", "--x", str(sim_dir / "X.mbf"), "--y", str(sim_dir / "Y.mbf"),
                     "--out", str(tmp_path)])
    assert code == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_real_divergence_exit_code(sim_dir, tmp_path):
    code = cli.main(["train", "--x", str(sim_dir / "X.mbf"), "--y", str(sim_dir / "Y.mbf"),
                     "--out", str(tmp_path), "--lr-max", "1e12", *FAST])
    assert code == 3


def test_end_to_end_synthetic_fuse(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["fuse", "--simulate", "--task", "mff", "--out", str(out), *FAST]) == 0
    names = set(os.listdir(out))
    assert {"F.png", "F.mbf", "common.png", "delta_x.png", "delta_y.png", "psi_delta_x.png",
            "metrics.csv", "report.json"} <= names
    assert "psnr" in capsys.readouterr().out


def test_identical_argv_identical_outputs(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["fuse", "--simulate", "--task", "vif", "--seed", "3",
                         "--out", str(tmp_path / name), *FAST]) == 0
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_train_then_fuse_with_checkpoint(sim_dir, tmp_path):
    args = ["--x", str(sim_dir / "X.mbf"), "--y", str(sim_dir / "Y.mbf")]
    assert cli.main(["train", *args, "--out", str(tmp_path / "m"), *FAST]) == 0
    assert cli.main(["fuse", *args, "--model", str(tmp_path / "m" / "model.maug"),
                     "--out", str(tmp_path / "f")]) == 0
    F = imageio.load_mbf(tmp_path / "f" / "F.mbf")
    assert F.shape == (1, 64, 64) and np.isfinite(F).all()


def test_eval_appends_csv(sim_dir, tmp_path, capsys):
    table = tmp_path / "m.csv"
    args = ["eval", "--f", str(sim_dir / "Y.mbf"), "--gt", str(sim_dir / "gt.mbf"),
            "--x", str(sim_dir / "X.mbf"), "--y", str(sim_dir / "Y.mbf"), "--csv", str(table)]
    assert cli.main(args) == 0
    assert cli.main(args) == 0
    lines = table.read_text().splitlines()
    assert lines[0] == "image,metric,value"
    assert len(lines) == 1 + 2 * 10


def test_eval_needs_something(sim_dir):
    assert cli.main(["eval", "--f", str(sim_dir / "Y.mbf")]) == 1


def test_inspect_image_and_checkpoint(sim_dir, tmp_path, capsys):
    assert cli.main(["inspect", str(sim_dir / "X.mbf")]) == 0
    assert "1x64x64" in capsys.readouterr().out
    assert cli.main(["train", "--x", str(sim_dir / "X.mbf"), "--y", str(sim_dir / "Y.mbf"),
                     "--out", str(tmp_path), *FAST]) == 0
    capsys.readouterr()
    assert cli.main(["inspect", str(tmp_path / "model.maug")]) == 0
    assert "params" in capsys.readouterr().out


def test_bench_small(capsys):
    assert cli.main(["bench", "--height", "32", "--width", "32", "--repeats", "2"]) == 0
    out = capsys.readouterr().out
    assert "not comparable" in out and "flops" in out
