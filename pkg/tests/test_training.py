import builtins
import csv

import numpy as np
import pytest

from maugif.exceptions import ConfigError, NumericError
from maugif.model import ADDITIVE, PsiSpec, build_model, default_configs
from maugif.training import (
    PatchBatch,
    TrainConfig,
    compute_losses,
    evaluate_losses,
    sample_patches,
    train,
)

FAST = dict(epochs=2, steps_per_epoch=2, batch_size=4, patch_size=16)


def chain(layers, a, c, bias):
    """Hidden unit 0 carries a * x through the stack, scaled by c at the output."""
    for layer in layers:
        layer.weight.data[:] = 0
        layer.bias.data[:] = 0
    layers[0].weight.data[0, 0] = a
    for layer in layers[1:-1]:
        layer.weight.data[0, 0] = 1
    layers[-1].weight.data[0, 0] = c
    layers[-1].bias.data[0] = bias


def test_losses_match_hand_computation():
    cfg_x, cfg_y = default_configs(ADDITIVE, 1, 1, kernel_size=1)
    model = build_model(ADDITIVE, cfg_x, cfg_y, PsiSpec())
    chain(model.enc_x.body, 0.5, 0.4, 0.1)    # E_x(x) = x + 0.2 x + 0.1
    chain(model.enc_y.body, 1.0, -0.5, 0.0)   # E_y(y) = y - 0.5 y
    chain(model.dec_x.residual, 2.0, 0.25, -0.05)  # D_x(z) = z + 0.5 z - 0.05
    chain(model.dec_y.residual, 1.0, 1.0, 0.0)     # D_y(z) = 2 z
    x = np.array([[[[0.1, 0.2], [0.3, 0.4]]]], dtype=np.float32)
    y = np.array([[[[0.5, 0.6], [0.7, 0.8]]]], dtype=np.float32)
    ex = 1.2 * x + 0.1
    ey = 0.5 * y
    loss1 = np.mean((ex - ey) ** 2)
    loss2 = np.mean((ex - x) ** 2) + np.mean((ey - y) ** 2)
    lossd = np.mean((1.5 * ex - 0.05 - x) ** 2) + np.mean((2 * ey - y) ** 2)
    lam = 0.7
    got = evaluate_losses(model, PatchBatch(x, y, [(0, 0)]), lam)
    assert got["loss1"] == pytest.approx(loss1, abs=1e-6)
    assert got["loss2"] == pytest.approx(loss2, abs=1e-6)
    assert got["lossd"] == pytest.approx(lossd, abs=1e-6)
    assert got["total"] == pytest.approx(loss1 + lam * loss2 + lossd, abs=1e-6)


def test_identity_encoders_give_zero_loss2(mff_pair):
    cfg = TrainConfig(**FAST)
    model = build_model(ADDITIVE, *default_configs(ADDITIVE, 1, 1), PsiSpec())
    batch = sample_patches(mff_pair.X, mff_pair.Y, cfg, np.random.default_rng(0))
    assert evaluate_losses(model, batch, 1.0)["loss2"] == 0


def test_equal_sources_tied_encoders_zero_loss1(mff_pair):
    model = build_model(ADDITIVE, *default_configs(ADDITIVE, 1, 1), PsiSpec())
    rng = np.random.default_rng(0)
    for px, py in zip(model.enc_x.parameters(), model.enc_y.parameters()):
        px.data[:] = rng.standard_normal(px.shape) * 0.2
        py.data[:] = px.data
    batch = PatchBatch(mff_pair.X[None], mff_pair.X[None], [(0, 0)])
    assert evaluate_losses(model, batch, 1.0)["loss1"] == 0


def test_full_size_patch_is_whole_image(mff_pair):
    cfg = TrainConfig(patch_size=64, batch_size=3)
    batch = sample_patches(mff_pair.X, mff_pair.Y, cfg, np.random.default_rng(0))
    for x, y in zip(batch.x, batch.y):
        np.testing.assert_array_equal(x, mff_pair.X)
        np.testing.assert_array_equal(y, mff_pair.Y)


def test_patch_sampling_determinism(mff_pair):
    cfg = TrainConfig(**FAST)
    rng = np.random.default_rng(9)
    a = sample_patches(mff_pair.X, mff_pair.Y, cfg, rng)
    b = sample_patches(mff_pair.X, mff_pair.Y, cfg, rng)
    assert a.coords != b.coords
    c = sample_patches(mff_pair.X, mff_pair.Y, cfg, np.random.default_rng(9))
    assert a.coords == c.coords
    np.testing.assert_array_equal(a.x, c.x)


def test_patches_are_co_located(mff_pair):
    cfg = TrainConfig(**FAST)
    batch = sample_patches(mff_pair.X, mff_pair.Y, cfg, np.random.default_rng(2))
    p = cfg.patch_size
    for (i, j), x, y in zip(batch.coords, batch.x, batch.y):
        np.testing.assert_array_equal(x, mff_pair.X[:, i:i + p, j:j + p])
        np.testing.assert_array_equal(y, mff_pair.Y[:, i:i + p, j:j + p])


def test_multiplicative_patch_coordinates(hmf_pair):
    cfg = TrainConfig(mechanism="multiplicative", patch_size=64, batch_size=2)
    batch = sample_patches(hmf_pair.X, hmf_pair.Y, cfg, np.random.default_rng(0), sf=4)
    assert batch.x.shape == (2, 8, 16, 16) and batch.y.shape == (2, 3, 64, 64)
    cfg = TrainConfig(mechanism="multiplicative", patch_size=32, batch_size=4)
    batch = sample_patches(hmf_pair.X, hmf_pair.Y, cfg, np.random.default_rng(1), sf=4)
    for (i, j), x, y in zip(batch.coords, batch.x, batch.y):
        np.testing.assert_array_equal(x, hmf_pair.X[:, i:i + 8, j:j + 8])
        np.testing.assert_array_equal(y, hmf_pair.Y[:, 4 * i:4 * i + 32, 4 * j:4 * j + 32])


def test_patch_larger_than_image(mff_pair):
    with pytest.raises(ConfigError):
        sample_patches(mff_pair.X, mff_pair.Y, TrainConfig(patch_size=65), np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [dict(lam=0), dict(lam=-1), dict(epochs=-1), dict(batch_size=0),
                                    dict(mechanism="other"), dict(warmup_fraction=1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_zero_epochs_returns_initial_model(mff_pair):
    model, report = train(mff_pair.X, mff_pair.Y, TrainConfig(epochs=0))
    assert report.epochs == [] and report.total == [] and report.steps == 0
    assert report.initial["total"] > 0


def test_same_seed_bit_identical_weights(mff_pair):
    a, _ = train(mff_pair.X, mff_pair.Y, TrainConfig(**FAST, seed=4))
    b, _ = train(mff_pair.X, mff_pair.Y, TrainConfig(**FAST, seed=4))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_one_step_moves_every_network(mff_pair):
    cfg = TrainConfig(epochs=1, steps_per_epoch=1, batch_size=4, patch_size=16)
    before = build_model(ADDITIVE, *default_configs(ADDITIVE, 1, 1), PsiSpec(), seed=0)
    snapshot = {n: p.data.copy() for n, p in before.named_parameters().items()}
    after, _ = train(mff_pair.X, mff_pair.Y, cfg, model=before)
    for net in ("E_x", "E_y", "D_x", "D_y"):
        moved = [not np.array_equal(p.data, snapshot[n])
                 for n, p in after.named_parameters().items() if n.startswith(net)]
        assert any(moved), net


def test_report_lengths_and_csv(mff_pair, tmp_path):
    _, report = train(mff_pair.X, mff_pair.Y, TrainConfig(**FAST))
    assert len(report.epochs) == len(report.total) == len(report.loss1) == FAST["epochs"]
    path = tmp_path / "losses.csv"
    report.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "loss1", "loss2", "lossd", "total"]
    assert len(rows) == FAST["epochs"] + 1
    assert float(rows[1][4]) == pytest.approx(report.total[0], rel=1e-5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_partial_report(mff_pair):
    cfg = TrainConfig(**FAST)
    model = build_model(ADDITIVE, *default_configs(ADDITIVE, 1, 1), PsiSpec())
    model.dec_x.residual[-1].bias.data[:] = 1e30
    with pytest.raises(NumericError) as info:
        train(mff_pair.X, mff_pair.Y, cfg, model=model)
    assert info.value.report is not None


def test_training_reads_no_files(mff_pair, monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError(f"unexpected file access: {args[:1]}")
    monkeypatch.setattr(builtins, "open", refuse)
    monkeypatch.setattr(np, "load", refuse)
    train(mff_pair.X, mff_pair.Y, TrainConfig(**FAST))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_larger_lambda_never_raises_loss2(mff_pair, seed):
    cfg = dict(epochs=4, steps_per_epoch=4, batch_size=8, patch_size=16, seed=seed)
    _, low = train(mff_pair.X, mff_pair.Y, TrainConfig(lam=0.1, **cfg))
    _, high = train(mff_pair.X, mff_pair.Y, TrainConfig(lam=1.0, **cfg))
    assert high.loss2[-1] <= low.loss2[-1]


def test_final_total_not_above_first_epoch(trained_mff):
    _, report = trained_mff
    assert report.total[-1] <= report.total[0]


def test_smoothed_total_non_increasing_after_epoch_5(trained_mff):
    _, report = trained_mff
    alpha = 2 / (5 + 1)
    smooth = [report.total[0]]
    for v in report.total[1:]:
        smooth.append(alpha * v + (1 - alpha) * smooth[-1])
    tail = np.array(smooth[4:])
    assert np.all(np.diff(tail) <= 0)


def test_reconstruction_loss_drops_tenfold(trained_mff):
    # Smoke bound measured on this implementation (final / initial about 0.015).
    _, report = trained_mff
    assert report.lossd[-1] < 0.1 * report.initial["lossd"]


def test_multiplicative_trains(trained_hmf):
    _, report = trained_hmf
    assert report.total[-1] < report.initial["total"]
    assert all(np.isfinite(report.total))
