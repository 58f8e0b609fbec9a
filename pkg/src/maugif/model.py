"""Dual cross-image autoencoders.

Two encoders map X and Y into a shared latent space; two decoders inject each
source's modality-specific feature back into that shared content.

Additive mechanism
    Encoders keep the source shape: ``E(x) = x + body(x)``.  A decoder is a
    residual feature injector, ``D(z) = z + psi(R(z))``.  Fusion evaluates the
    residual branch once on ``E_x(X)`` and injects it into Y:
    ``F = Y + psi(R_x(E_x(X)))``.

Multiplicative mechanism
    Both encoders land in the full-resolution cube of X's bands: ``E_x``
    cubic-upsamples X then refines it, ``E_y`` expands Y's bands with 1x1
    convolutions.  A decoder modulates the latent with a positive field and
    projects it back to its source: ``D(z) = Proj(z * M(z))``.  The fused
    image is the mean of the two aligned latents.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .degradation import upsample_cubic
from .exceptions import ConfigError, DimensionError, FormatError, StateError, UsageError
from .validation import as_image

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"
MECHANISMS = (ADDITIVE, MULTIPLICATIVE)

IDENTITY = "identity"
HARD_THRESHOLD = "hard"

LEAKY_SLOPE = 0.2
# softplus(SOFTPLUS_ONE) == 1, so a zero-weight modulation branch starts at M = 1.
SOFTPLUS_ONE = math.log(math.e - 1.0)
# Scale of the Kaiming draw for the last layer of additive decoder residuals.
SMALL_INIT = 0.1


@dataclass(frozen=True)
class PsiSpec:
    kind: str = IDENTITY
    sigma: float = 0.2

    def __post_init__(self):
        if self.kind not in (IDENTITY, HARD_THRESHOLD):
            raise ConfigError(f"psi kind must be {IDENTITY!r} or {HARD_THRESHOLD!r}, got {self.kind!r}")
        if not 0.0 <= self.sigma <= 0.4:
            raise ConfigError(f"psi sigma must lie in [0, 0.4], got {self.sigma}")


def psi(x, spec, straight_through=False):
    """Gate modality-specific responses: identity, or keep only entries above sigma.

    Works on Tensors (differentiably) and on plain arrays.
    """
    if spec.kind == IDENTITY:
        return x
    if isinstance(x, Tensor):
        return ad.hard_threshold(x, spec.sigma, straight_through=straight_through)
    x = np.asarray(x)
    return np.where(x > x.dtype.type(spec.sigma), x, x.dtype.type(0))


@dataclass
class EncoderConfig:
    in_channels: int
    hidden_channels: int = 8
    n_layers: int = 3
    kernel_size: int = 3
    latent_channels: int | None = None

    def __post_init__(self):
        if self.latent_channels is None:
            self.latent_channels = self.in_channels
        if min(self.in_channels, self.hidden_channels, self.latent_channels) < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.n_layers < 2:
            raise ConfigError(f"n_layers must be >= 2, got {self.n_layers}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")


class Conv:
    """Convolution layer with bias; the weight is Cout x Cin x k x k."""

    def __init__(self, cin, cout, k, rng, stride=1, padding=None, init="kaiming", name=""):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        shape = (cout, cin, k, k)
        if init in ("kaiming", "small"):
            std = math.sqrt(2.0 / (1 + LEAKY_SLOPE ** 2) / (cin * k * k))
            if init == "small":
                std *= SMALL_INIT
            w = rng.standard_normal(shape) * std
        elif init == "zero":
            w = np.zeros(shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        y = ad.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return ad.add_channel_bias(y, self.bias)

    def macs(self, in_shape):
        return ad.conv2d_macs(in_shape, self.weight.shape, self.stride, self.padding)

    def out_shape(self, in_shape):
        n, _, h, w = in_shape
        k = self.weight.shape[2]
        return (n, self.weight.shape[0], (h + 2 * self.padding - k) // self.stride + 1,
                (w + 2 * self.padding - k) // self.stride + 1)

    def parameters(self):
        return [self.weight, self.bias]


def _stack(x, layers):
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = ad.leaky_relu(x, LEAKY_SLOPE)
    return x


def _stack_macs(shape, layers):
    total = 0
    for layer in layers:
        total += layer.macs(shape)
        shape = layer.out_shape(shape)
    return total, shape


def _body(cin, hidden, cout, n_layers, k, rng, name, last_init="zero"):
    """Conv stack whose last layer starts at zero (by default), so skip + body starts as the skip."""
    widths = [cin] + [hidden] * (n_layers - 1) + [cout]
    layers = []
    for i in range(n_layers):
        last = i == n_layers - 1
        layers.append(Conv(widths[i], widths[i + 1], k, rng, init=last_init if last else "kaiming",
                           name=f"{name}.{i}"))
    return layers


class Encoder:
    """Maps one source into the shared latent space.

    ``kind`` is "residual" (latent = input + body), "upsample" (latent =
    cubic-upsampled input + body) or "spectral" (latent = 1x1 head + 1x1 body).
    """

    def __init__(self, cfg, kind, rng, name, sf=1):
        self.cfg = cfg
        self.kind = kind
        self.sf = sf
        self.head = None
        k = cfg.kernel_size
        if kind == "residual":
            if cfg.latent_channels != cfg.in_channels:
                raise ConfigError("a residual encoder keeps the channel count of its input")
            self.body = _body(cfg.in_channels, cfg.hidden_channels, cfg.latent_channels,
                              cfg.n_layers, k, rng, f"{name}.body")
        elif kind == "upsample":
            if cfg.latent_channels != cfg.in_channels:
                raise ConfigError("the upsampling encoder keeps the band count of its input")
            self.body = _body(cfg.in_channels, cfg.hidden_channels, cfg.latent_channels,
                              cfg.n_layers, k, rng, f"{name}.body")
        elif kind == "spectral":
            self.head = Conv(cfg.in_channels, cfg.latent_channels, 1, rng, name=f"{name}.head")
            self.head.weight.data[:] = 1.0 / cfg.in_channels
            self.body = _body(cfg.latent_channels, cfg.hidden_channels, cfg.latent_channels,
                              cfg.n_layers - 1, 1, rng, f"{name}.body")
        else:
            raise ConfigError(f"unknown encoder kind {kind!r}")

    def lift(self, x):
        """The skip path: identity, cubic upsampling, or the 1x1 band expansion."""
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"encoder expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        if self.kind == "upsample":
            if x.requires_grad:
                raise UsageError("the upsampling encoder does not differentiate through its input")
            return Tensor._result(np.stack([upsample_cubic(img, self.sf) for img in x.data]))
        if self.kind == "spectral":
            return self.head(x)
        return x

    def refine(self, lifted):
        return ad.add(lifted, _stack(lifted, self.body))

    def __call__(self, x):
        return self.refine(self.lift(x))

    def macs(self, in_shape):
        n, c, h, w = in_shape
        total = 0
        if self.kind == "upsample":
            in_shape = (n, c, h * self.sf, w * self.sf)
        elif self.kind == "spectral":
            total += self.head.macs(in_shape)
            in_shape = self.head.out_shape(in_shape)
        m, out = _stack_macs(in_shape, self.body)
        return total + m, out

    def layers(self):
        return ([self.head] if self.head else []) + self.body

    def parameters(self):
        return [p for layer in self.layers() for p in layer.parameters()]


class AdditiveDecoder:
    """Residual feature injector ``base + psi(R(src))``; ``calls`` counts forward passes."""

    def __init__(self, latent_channels, out_channels, hidden, k, psi_spec, rng, name):
        if latent_channels != out_channels:
            raise ConfigError("an additive decoder maps a latent back onto the same shape")
        self.psi = psi_spec
        self.residual = _body(latent_channels, hidden, out_channels, 2, k, rng, f"{name}.residual",
                              last_init="small")
        self.calls = 0
        self.straight_through = False

    def residual_branch(self, z):
        return _stack(z, self.residual)

    def __call__(self, z, base=None, return_parts=False, exact=False):
        """``base + psi(R(z))`` with ``base`` defaulting to ``z``.

        With ``exact`` the sum is formed in float64 outside the autodiff graph,
        so subtracting the float32 base recovers the injected term bit for bit.
        """
        self.calls += 1
        r = self.residual_branch(z)
        injected = psi(r, self.psi, straight_through=self.straight_through)
        base = z if base is None else base
        if exact:
            out = Tensor._result(base.data.astype(np.float64) + injected.data.astype(np.float64))
        else:
            out = ad.add(base, injected)
        if return_parts:
            return out, r, injected
        return out

    def macs(self, in_shape):
        return _stack_macs(in_shape, self.residual)

    def layers(self):
        return list(self.residual)

    def parameters(self):
        return [p for layer in self.residual for p in layer.parameters()]


class MultiplicativeDecoder:
    """``Proj(z * M(z))`` with a positive modulation field M (softplus output).

    ``Proj`` is a stride-``sf`` sf x sf conv initialized to per-band average
    pooling, or a 1x1 band projection initialized to the band mean.
    """

    def __init__(self, latent_channels, out_channels, hidden, k, rng, name, sf=1, spectral=False):
        self.modulation = [Conv(latent_channels, hidden, k, rng, name=f"{name}.modulation.0"),
                           Conv(hidden, latent_channels, k, rng, init="zero", name=f"{name}.modulation.1")]
        self.modulation[1].bias.data[:] = SOFTPLUS_ONE
        self.calls = 0
        if spectral:
            self.proj = Conv(latent_channels, out_channels, 1, rng, name=f"{name}.proj")
            self.proj.weight.data[:] = 1.0 / latent_channels
        else:
            if latent_channels != out_channels:
                raise ConfigError("the spatial projection keeps the band count")
            self.proj = Conv(latent_channels, out_channels, sf, rng, stride=sf, padding=0,
                             init="zero", name=f"{name}.proj")
            for b in range(out_channels):
                self.proj.weight.data[b, b] = 1.0 / (sf * sf)

    def modulation_field(self, z):
        return ad.softplus(_stack(z, self.modulation))

    def __call__(self, z):
        self.calls += 1
        return self.proj(ad.mul(z, self.modulation_field(z)))

    def macs(self, in_shape):
        m, shape = _stack_macs(in_shape, self.modulation)
        return m + self.proj.macs(shape), self.proj.out_shape(shape)

    def layers(self):
        return self.modulation + [self.proj]

    def parameters(self):
        return [p for layer in self.layers() for p in layer.parameters()]


@dataclass
class ModelPair:
    mechanism: str
    psi: PsiSpec
    cfg_x: EncoderConfig
    cfg_y: EncoderConfig
    enc_x: Encoder
    enc_y: Encoder
    dec_x: object
    dec_y: object
    sf: int = 1
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def networks(self):
        return {"E_x": self.enc_x, "E_y": self.enc_y, "D_x": self.dec_x, "D_y": self.dec_y}

    def named_parameters(self):
        return {p.name: p for net in self.networks().values() for p in net.parameters()}

    def parameters(self):
        return list(self.named_parameters().values())

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def set_training(self, training):
        if self.mechanism == ADDITIVE:
            self.dec_x.straight_through = training
            self.dec_y.straight_through = training

    def check_finite(self):
        for name, p in self.named_parameters().items():
            if not np.isfinite(p.data).all():
                raise StateError(f"parameter {name} holds non-finite values")


def build_model(mechanism, cfg_x, cfg_y, psi_spec=None, seed=0, sf=1):
    """Deterministically initialize the four networks for ``mechanism``."""
    if mechanism not in MECHANISMS:
        raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    psi_spec = psi_spec or PsiSpec()
    rng = np.random.default_rng(seed)
    h, k = cfg_x.hidden_channels, cfg_x.kernel_size
    if mechanism == ADDITIVE:
        if cfg_x.in_channels != cfg_y.in_channels:
            raise ConfigError("additive fusion needs sources with equal channel counts")
        enc_x = Encoder(cfg_x, "residual", rng, "E_x")
        enc_y = Encoder(cfg_y, "residual", rng, "E_y")
        dec_x = AdditiveDecoder(cfg_x.latent_channels, cfg_x.in_channels, h, k, psi_spec, rng, "D_x")
        dec_y = AdditiveDecoder(cfg_y.latent_channels, cfg_y.in_channels, cfg_y.hidden_channels,
                                cfg_y.kernel_size, psi_spec, rng, "D_y")
    else:
        if cfg_y.latent_channels != cfg_x.in_channels or cfg_x.latent_channels != cfg_x.in_channels:
            raise ConfigError("multiplicative latents must carry X's band count")
        if psi_spec.kind != IDENTITY:
            raise ConfigError("psi gating applies to additive fusion only")
        enc_x = Encoder(cfg_x, "upsample", rng, "E_x", sf=sf)
        enc_y = Encoder(cfg_y, "spectral", rng, "E_y")
        lat = cfg_x.in_channels
        dec_x = MultiplicativeDecoder(lat, cfg_x.in_channels, h, k, rng, "D_x", sf=sf)
        dec_y = MultiplicativeDecoder(lat, cfg_y.in_channels, cfg_y.hidden_channels,
                                      cfg_y.kernel_size, rng, "D_y", spectral=True)
    return ModelPair(mechanism, psi_spec, cfg_x, cfg_y, enc_x, enc_y, dec_x, dec_y, sf=sf, seed=seed)


def default_configs(mechanism, channels_x, channels_y, hidden=8, n_layers=3, kernel_size=3):
    cfg_x = EncoderConfig(channels_x, hidden, n_layers, kernel_size)
    latent_y = channels_y if mechanism == ADDITIVE else channels_x
    cfg_y = EncoderConfig(channels_y, hidden, n_layers, kernel_size, latent_channels=latent_y)
    return cfg_x, cfg_y


# Image-level operations.  Images are (C, H, W) arrays; batches are (N, C, H, W).

def _batch(image):
    if isinstance(image, Tensor):
        return image, False
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        return Tensor._result(arr[None]), True
    if arr.ndim == 4:
        return Tensor._result(arr), False
    return Tensor._result(as_image(arr)[None]), True


def _unbatch(t, squeeze):
    return t.data[0] if squeeze else t.data


def _pick(model, which):
    if which not in ("x", "y", "X", "Y"):
        raise ConfigError(f"which must be 'x' or 'y', got {which!r}")
    return which.lower()


def encode(model, which, image):
    which = _pick(model, which)
    enc = model.enc_x if which == "x" else model.enc_y
    t, squeeze = _batch(image)
    return _unbatch(enc(t), squeeze)


def decode(model, which, z):
    which = _pick(model, which)
    dec = model.dec_x if which == "x" else model.dec_y
    t, squeeze = _batch(z)
    if model.mechanism == ADDITIVE:
        return _unbatch(dec(t, exact=True), squeeze)
    return _unbatch(dec(t), squeeze)


def residual_branch(model, which, z):
    """Raw residual R(z) of an additive decoder, before psi."""
    if model.mechanism != ADDITIVE:
        raise UsageError("residual branches exist only in additive decoders")
    dec = model.dec_x if _pick(model, which) == "x" else model.dec_y
    t, squeeze = _batch(z)
    return _unbatch(dec.residual_branch(t), squeeze)


@dataclass
class CommonContent:
    c_from_x: np.ndarray
    c_from_y: np.ndarray
    c_mean: np.ndarray

    @property
    def alignment(self):
        """Frobenius norm of c_from_x - c_from_y."""
        d = self.c_from_x.astype(np.float64) - self.c_from_y
        return float(np.sqrt(np.sum(d * d)))


@dataclass
class ModalityFeature:
    """``delta`` is the raw injected residual; ``thresholded`` is psi(delta)."""

    delta: np.ndarray
    thresholded: np.ndarray


@dataclass
class FusionResult:
    F: np.ndarray
    common: CommonContent
    feat_x: ModalityFeature | None = None
    feat_y: ModalityFeature | None = None


def extract_common(model, X, Y):
    cx = encode(model, "x", X)
    cy = encode(model, "y", Y)
    return CommonContent(cx, cy, ((cx + cy) * np.float32(0.5)).astype(np.float32))


def modality_feature(model, which, image):
    """Feature that ``which``'s decoder injects when reconstructing ``image``.

    Additive: delta = R(E(image)), thresholded = D(E(image)) - E(image).
    Multiplicative: delta = M(E(image)) - 1, the modulation field's departure
    from the identity; thresholded is the same array.
    """
    which = _pick(model, which)
    enc = model.enc_x if which == "x" else model.enc_y
    dec = model.dec_x if which == "x" else model.dec_y
    t, squeeze = _batch(image)
    z = enc(t)
    if model.mechanism == ADDITIVE:
        dec.calls += 1
        r = dec.residual_branch(z)
        return ModalityFeature(_unbatch(r, squeeze), _unbatch(psi(r, model.psi), squeeze))
    dec.calls += 1
    m = dec.modulation_field(z).data - np.float32(1.0)
    m = m[0] if squeeze else m
    return ModalityFeature(m, m)


def fuse(model, X, Y, direction="x"):
    """Fuse one source pair with a trained model.

    Additive fusion is ``F = D_x(Y)``: the decoder trained to inject X's
    modality-specific features into common content is applied to Y directly,
    in exactly one decoder pass.  The returned feature for that direction
    holds the injected residual ``R_x(Y)`` and its gated form; the
    reconstruction residual ``D_x(E_x(X)) - E_x(X)`` is available from
    :func:`modality_feature`.  Direction "y" gives ``F = D_y(X)``.
    """
    model.check_finite()
    direction = _pick(model, direction)
    tx, squeeze = _batch(X)
    ty, _ = _batch(Y)
    cx = model.enc_x(tx)
    cy = model.enc_y(ty)
    if cx.shape != cy.shape:
        raise DimensionError(f"latents differ in shape: {cx.shape} vs {cy.shape}")
    common = CommonContent(_unbatch(cx, squeeze), _unbatch(cy, squeeze),
                           _unbatch(ad.scale(ad.add(cx, cy), 0.5), squeeze))
    if model.mechanism == MULTIPLICATIVE:
        return FusionResult(common.c_mean.copy(), common)
    if direction == "x":
        F, r, inj = model.dec_x(ty, return_parts=True, exact=True)
    else:
        F, r, inj = model.dec_y(tx, return_parts=True, exact=True)
    feat = ModalityFeature(_unbatch(r, squeeze), _unbatch(inj, squeeze))
    result = FusionResult(_unbatch(F, squeeze), common)
    if direction == "x":
        result.feat_x = feat
    else:
        result.feat_y = feat
    return result


def fuse_macs(model, shape_x, shape_y=None, direction="x"):
    """Multiply-accumulates of one :func:`fuse` call for (C, H, W) source shapes."""
    shape_y = shape_y or shape_x
    sx = (1, *shape_x)
    sy = (1, *shape_y)
    mx, lat_x = model.enc_x.macs(sx)
    my, lat_y = model.enc_y.macs(sy)
    total = mx + my
    if model.mechanism == ADDITIVE:
        dec = model.dec_x if direction == "x" else model.dec_y
        total += dec.macs(sy if direction == "x" else sx)[0]
    return total


# Checkpoints.
#
# Layout (little-endian): b"MAUG1", u8 mechanism (0 additive, 1 multiplicative),
# u32 count of config ints, that many i32 (in_x, in_y, hidden_x, hidden_y,
# n_layers, kernel_size, latent_x, latent_y, sf, psi_kind, seed), f64 psi
# sigma, u32 tensor count, then per tensor: u32 name length, utf-8 name,
# u32 ndim, ndim x u32 dims, float32 payload.

MAGIC = b"MAUG1"


def save_checkpoint(model, path):
    ints = [model.cfg_x.in_channels, model.cfg_y.in_channels, model.cfg_x.hidden_channels,
            model.cfg_y.hidden_channels, model.cfg_x.n_layers, model.cfg_x.kernel_size,
            model.cfg_x.latent_channels, model.cfg_y.latent_channels, model.sf,
            0 if model.psi.kind == IDENTITY else 1, model.seed]
    chunks = [MAGIC, struct.pack("<B", MECHANISMS.index(model.mechanism)),
              struct.pack("<I", len(ints)), struct.pack(f"<{len(ints)}i", *ints),
              struct.pack("<d", model.psi.sigma)]
    named = model.named_parameters()
    chunks.append(struct.pack("<I", len(named)))
    for name, p in named.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: checkpoint truncated at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a MAUG1 checkpoint")
    (mech,) = struct.unpack("<B", take(1))
    if mech >= len(MECHANISMS):
        raise FormatError(f"{path}: unknown mechanism tag {mech}")
    (n_ints,) = struct.unpack("<I", take(4))
    ints = struct.unpack(f"<{n_ints}i", take(4 * n_ints))
    if n_ints != 11:
        raise FormatError(f"{path}: expected 11 config ints, found {n_ints}")
    in_x, in_y, hid_x, hid_y, n_layers, k, lat_x, lat_y, sf, psi_kind, seed = ints
    (sigma,) = struct.unpack("<d", take(8))
    mechanism = MECHANISMS[mech]
    psi_spec = PsiSpec(IDENTITY if psi_kind == 0 else HARD_THRESHOLD, sigma)
    cfg_x = EncoderConfig(in_x, hid_x, n_layers, k, lat_x)
    cfg_y = EncoderConfig(in_y, hid_y, n_layers, k, lat_y)
    model = build_model(mechanism, cfg_x, cfg_y, psi_spec, seed=seed, sf=sf)
    named = model.named_parameters()
    (n_tensors,) = struct.unpack("<I", take(4))
    if n_tensors != len(named):
        raise FormatError(f"{path}: {n_tensors} tensors stored, model has {len(named)}")
    for _ in range(n_tensors):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape))
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        if name not in named or named[name].shape != tuple(shape):
            raise FormatError(f"{path}: unexpected tensor {name} with shape {shape}")
        named[name].data = data.astype(np.float32)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return model
