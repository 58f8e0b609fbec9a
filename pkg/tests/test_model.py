import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maugif.exceptions import ConfigError, DimensionError, FormatError, StateError
from maugif.model import (
    ADDITIVE,
    HARD_THRESHOLD,
    IDENTITY,
    MULTIPLICATIVE,
    EncoderConfig,
    PsiSpec,
    build_model,
    decode,
    default_configs,
    encode,
    extract_common,
    fuse,
    fuse_macs,
    load_checkpoint,
    modality_feature,
    psi,
    residual_branch,
    save_checkpoint,
)


def additive(channels=1, seed=0, psi_spec=None, hidden=8):
    cfg_x, cfg_y = default_configs(ADDITIVE, channels, channels, hidden)
    return build_model(ADDITIVE, cfg_x, cfg_y, psi_spec or PsiSpec(), seed=seed)


def multiplicative(bands=8, msi=3, sf=4, seed=0):
    cfg_x, cfg_y = default_configs(MULTIPLICATIVE, bands, msi)
    return build_model(MULTIPLICATIVE, cfg_x, cfg_y, PsiSpec(), seed=seed, sf=sf)


def randomize(model, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data[:] = rng.standard_normal(p.shape) * scale


# psi

def test_psi_examples():
    hard = PsiSpec(HARD_THRESHOLD, 0.3)
    assert psi(np.array([0.5]), hard)[0] == np.float32(0.5)
    assert psi(np.array([-0.2]), hard)[0] == 0
    x = np.array([-1.0, 0.0, 0.7], dtype=np.float32)
    np.testing.assert_array_equal(psi(x, PsiSpec(IDENTITY)), x)


@pytest.mark.parametrize("sigma", [-0.1, 0.41])
def test_psi_sigma_range(sigma):
    with pytest.raises(ConfigError):
        PsiSpec(HARD_THRESHOLD, sigma)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_identity_psi_non_expansive(a, b):
    spec = PsiSpec(IDENTITY)
    pa, pb = psi(np.array([a]), spec)[0], psi(np.array([b]), spec)[0]
    assert abs(pa - pb) <= abs(a - b)


def test_hard_threshold_not_globally_non_expansive():
    # Documented: a = sigma + eps and b = sigma - eps are 2 eps apart but map sigma apart.
    spec = PsiSpec(HARD_THRESHOLD, 0.2)
    out = psi(np.array([0.21, 0.19]), spec)
    assert abs(out[0] - out[1]) > 0.02


# construction

def test_default_additive_param_budget():
    assert additive(channels=3).n_params <= 10_000


def test_default_multiplicative_param_budget():
    assert multiplicative().n_params <= 10_000


def test_same_seed_same_weights():
    a, b = additive(seed=3), additive(seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_wider_hidden_means_more_params():
    assert additive(hidden=16).n_params > additive(hidden=8).n_params


def test_additive_channel_mismatch_rejected():
    with pytest.raises(ConfigError):
        build_model(ADDITIVE, EncoderConfig(1), EncoderConfig(3))


def test_multiplicative_rejects_hard_threshold():
    cfg_x, cfg_y = default_configs(MULTIPLICATIVE, 8, 3)
    with pytest.raises(ConfigError):
        build_model(MULTIPLICATIVE, cfg_x, cfg_y, PsiSpec(HARD_THRESHOLD, 0.2), sf=4)


# shapes

def test_additive_latent_shape(rng):
    model = additive(channels=3)
    assert encode(model, "x", rng.uniform(size=(3, 64, 64))).shape == (3, 64, 64)


def test_multiplicative_latent_shapes(rng):
    model = multiplicative()
    assert encode(model, "x", rng.uniform(size=(8, 16, 16))).shape == (8, 64, 64)
    assert encode(model, "y", rng.uniform(size=(3, 64, 64))).shape == (8, 64, 64)


def test_encoder_channel_mismatch(rng):
    with pytest.raises(DimensionError):
        encode(additive(channels=3), "x", rng.uniform(size=(1, 8, 8)))


def test_multiplicative_decoder_pooling_oracle():
    # M == 1 and average-pool projection: a constant 0.5 latent decodes to constant 0.5.
    model = multiplicative()
    z = np.full((8, 64, 64), 0.5, dtype=np.float32)
    out = decode(model, "x", z)
    assert out.shape == (8, 16, 16)
    np.testing.assert_allclose(out, 0.5, atol=1e-6)


# decoder identity

def test_zero_residual_decodes_to_input(rng):
    model = additive()
    for p in model.dec_x.parameters():
        p.data[:] = 0
    z = rng.uniform(size=(1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(decode(model, "x", z), z)


@pytest.mark.parametrize("spec", [PsiSpec(IDENTITY), PsiSpec(HARD_THRESHOLD, 0.1)])
def test_decode_minus_input_is_gated_residual(rng, spec):
    model = additive(psi_spec=spec)
    randomize(model)
    z = rng.uniform(size=(1, 12, 12)).astype(np.float32)
    out = decode(model, "x", z)
    gated = psi(residual_branch(model, "x", z), spec)
    np.testing.assert_array_equal(out - z, gated)


# fusion

def test_fuse_calls_one_decoder(rng):
    model = additive()
    X, Y = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32)
    before = model.dec_x.calls + model.dec_y.calls
    fuse(model, X, Y)
    assert model.dec_x.calls + model.dec_y.calls - before == 1


def test_fuse_is_decoder_applied_to_y(rng):
    model = additive()
    randomize(model)
    X, Y = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32)
    result = fuse(model, X, Y)
    np.testing.assert_array_equal(result.F, decode(model, "x", Y))
    np.testing.assert_array_equal(result.F - Y, result.feat_x.thresholded)


def test_fuse_direction_y(rng):
    model = additive()
    randomize(model)
    X, Y = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32)
    result = fuse(model, X, Y, direction="y")
    np.testing.assert_array_equal(result.F, decode(model, "y", X))
    assert result.feat_x is None


def test_hard_threshold_below_sigma_returns_y(rng):
    model = additive(psi_spec=PsiSpec(HARD_THRESHOLD, 0.4))
    for p in model.dec_x.parameters():
        p.data[:] = 0
    model.dec_x.residual[-1].bias.data[:] = 0.3
    X, Y = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(fuse(model, X, Y).F, Y)


def test_equal_sources_tied_weights(rng):
    model = additive()
    randomize(model)
    for px, py in zip(model.enc_x.parameters(), model.enc_y.parameters()):
        py.data[:] = px.data
    X = rng.uniform(size=(1, 16, 16)).astype(np.float32)
    common = extract_common(model, X, X)
    np.testing.assert_array_equal(common.c_from_x, common.c_from_y)
    assert common.alignment == 0


def test_random_model_alignment_finite(rng):
    model = additive()
    randomize(model)
    X, Y = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32)
    assert np.isfinite(extract_common(model, X, Y).alignment)


def test_modality_feature_contract(rng):
    spec = PsiSpec(HARD_THRESHOLD, 0.1)
    model = additive(psi_spec=spec)
    randomize(model)
    X = rng.uniform(size=(1, 16, 16)).astype(np.float32)
    feat = modality_feature(model, "x", X)
    np.testing.assert_array_equal(feat.thresholded, psi(feat.delta, spec))


def test_multiplicative_fuse_is_latent_mean(rng):
    model = multiplicative()
    X = rng.uniform(size=(8, 16, 16)).astype(np.float32)
    Y = rng.uniform(size=(3, 64, 64)).astype(np.float32)
    result = fuse(model, X, Y)
    np.testing.assert_allclose(result.F, 0.5 * (result.common.c_from_x + result.common.c_from_y),
                               atol=1e-7)


def test_non_finite_weights_are_state_error(rng):
    model = additive()
    model.dec_x.residual[0].weight.data[0, 0, 0, 0] = np.nan
    X = rng.uniform(size=(1, 8, 8)).astype(np.float32)
    with pytest.raises(StateError):
        fuse(model, X, X)


def test_fuse_macs_scale_with_area():
    model = additive()
    small = fuse_macs(model, (1, 32, 32))
    assert fuse_macs(model, (1, 64, 64)) == 4 * small


# checkpoints

@pytest.mark.parametrize("factory", [additive, multiplicative])
def test_checkpoint_round_trip_bit_exact(tmp_path, factory):
    model = factory()
    randomize(model, seed=5)
    path = tmp_path / "m.maug"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.mechanism == model.mechanism
    assert loaded.psi == model.psi
    for (na, pa), (nb, pb) in zip(model.named_parameters().items(), loaded.named_parameters().items()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.maug"
    save_checkpoint(additive(), path)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.maug"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError):
        load_checkpoint(path)
