"""Convolutional autoencoder compressing a 61 x 41 scan to a k = 4 code.

Encoder: [conv 3x3 + ReLU -> maxpool 2] per stage -> flatten -> dense -> k.
Decoder: dense -> reshape -> [upsample 2 -> conv 3x3 + ReLU] per stage
-> conv 3x3 to one channel (identity). The scan is standardized
(per-cell mean, one global scale), zero-padded to 64 x 44, and the
reconstruction is cropped back before the loss. Feature maps are
channels-last; the bottleneck is flattened in (row, column, channel) order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import config, modelio
from ._runtime import tune_allocator
from .errors import NonFiniteActivation, ShapeMismatch
from .layers import (
    ConvLayerSpec,
    conv2d_batch,
    conv2d_batch_backward,
    dense_backward,
    dense_forward,
    maxpool2_batch,
    maxpool2_batch_backward,
    upsample_nn,
    upsample_nn_batch_backward,
)
from .optim import AdamConfig, train_minibatch


@dataclass(frozen=True)
class AeArchitecture:
    grid_shape: tuple = (config.GRID_ROWS, config.GRID_COLS)
    padded_shape: tuple = config.PADDED_SHAPE
    enc_channels: tuple = (8, 16)
    k: int = 4
    filter_size: int = 3

    def __post_init__(self):
        stages = len(self.enc_channels)
        h, w = self.padded_shape
        if h % 2**stages or w % 2**stages:
            raise ShapeMismatch(f"padded shape {self.padded_shape} not divisible by {2**stages}")
        if self.grid_shape[0] > h or self.grid_shape[1] > w:
            raise ShapeMismatch("grid larger than padded shape")
        if self.k < 1:
            raise ValueError("latent dimension must be >= 1")

    @property
    def bottleneck(self):
        """Channels-last shape ``(H, W, C)`` of the innermost feature map."""
        s = 2 ** len(self.enc_channels)
        return (self.padded_shape[0] // s, self.padded_shape[1] // s, self.enc_channels[-1])

    @property
    def flat_dim(self):
        h, w, c = self.bottleneck
        return h * w * c

    def _conv(self, cin, cout, act="relu"):
        f = self.filter_size
        return ConvLayerSpec(cin, cout, (f, f), 1, (f // 2, f // 2), act)

    def encoder_convs(self):
        chans = (1, *self.enc_channels)
        return [self._conv(chans[i], chans[i + 1]) for i in range(len(self.enc_channels))]

    def decoder_convs(self):
        rev = list(reversed(self.enc_channels))
        outs = rev[1:] + [self.enc_channels[0]]
        convs, cin = [], rev[0]
        for cout in outs:
            convs.append(self._conv(cin, cout))
            cin = cout
        convs.append(self._conv(cin, 1, "identity"))
        return convs

    def param_layout(self):
        """Ordered ``(name, shape)`` pairs making up the flat parameter vector."""
        layout = []
        for i, c in enumerate(self.encoder_convs()):
            layout += [(f"enc{i}.w", c.weight_shape), (f"enc{i}.b", (c.filter_count,))]
        layout += [("enc_dense.w", (self.k, self.flat_dim)), ("enc_dense.b", (self.k,))]
        layout += [("dec_dense.w", (self.flat_dim, self.k)), ("dec_dense.b", (self.flat_dim,))]
        for i, c in enumerate(self.decoder_convs()):
            layout += [(f"dec{i}.w", c.weight_shape), (f"dec{i}.b", (c.filter_count,))]
        return layout

    @property
    def param_count(self):
        return sum(int(np.prod(s)) for _, s in self.param_layout())

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["grid_shape"]), tuple(d["padded_shape"]), tuple(d["enc_channels"]), int(d["k"]), int(d["filter_size"]))


def unpack(arch: AeArchitecture, flat):
    """Views into ``flat`` keyed by layer parameter name."""
    out, pos = {}, 0
    for name, shape in arch.param_layout():
        size = int(np.prod(shape))
        out[name] = flat[pos : pos + size].reshape(shape)
        pos += size
    return out


def init_params(arch: AeArchitecture, seed=0):
    """Uniform fan-in scaled weights, zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(arch.param_count)
    views = unpack(arch, flat)
    for name, view in views.items():
        if name.endswith(".w"):
            fan_in = int(np.prod(view.shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            view[...] = rng.uniform(-bound, bound, size=view.shape)
    return flat


@dataclass
class AeParams:
    arch: AeArchitecture
    flat: np.ndarray
    mean: np.ndarray = None  # per-cell mean of the training scans
    scale: float = 1.0  # global std of the centred training scans
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.size != self.arch.param_count:
            raise ShapeMismatch(f"{self.flat.size} parameters, architecture needs {self.arch.param_count}")
        if self.mean is None:
            self.mean = np.zeros(self.arch.grid_shape)
        self.mean = np.asarray(self.mean, dtype=float)

    @property
    def k(self):
        return self.arch.k

    def copy(self):
        return AeParams(self.arch, self.flat.copy(), self.mean.copy(), self.scale, self.seed, dict(self.meta))

    # -- data transforms ------------------------------------------------
    def standardize(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-2:] != self.arch.grid_shape:
            raise ShapeMismatch(f"scan shape {values.shape[-2:]} != {self.arch.grid_shape}")
        return (values - self.mean) / self.scale

    def destandardize(self, std):
        return std * self.scale + self.mean

    def pad(self, std):
        h, w = self.arch.grid_shape
        ph, pw = self.arch.padded_shape
        out = np.zeros((std.shape[0], ph, pw, 1))
        out[:, :h, :w, 0] = std
        return out

    def crop(self, padded):
        h, w = self.arch.grid_shape
        return padded[:, :h, :w, 0]


def _finite(a, where):
    if not np.all(np.isfinite(a)):
        raise NonFiniteActivation(f"non-finite activation in {where}")
    return a


def _encode(arch, p, x):
    caches = []
    h = x
    for i, conv in enumerate(arch.encoder_convs()):
        h, c1 = conv2d_batch(h, conv, p[f"enc{i}.w"], p[f"enc{i}.b"])
        _finite(h, f"enc{i}")
        h, arg = maxpool2_batch(h)
        caches.append((c1, arg))
    flat_in = h.reshape(h.shape[0], -1)
    z, cd = dense_forward(flat_in, p["enc_dense.w"], p["enc_dense.b"])
    _finite(z, "latent")
    return z, (caches, cd, h.shape)


def _decode(arch, p, z):
    h, cd = dense_forward(z, p["dec_dense.w"], p["dec_dense.b"])
    h = h.reshape(z.shape[0], *arch.bottleneck)
    caches = []
    convs = arch.decoder_convs()
    for i, conv in enumerate(convs):
        if i < len(convs) - 1:
            h = upsample_nn(h, 2, axes=(1, 2))
        h, c = conv2d_batch(h, conv, p[f"dec{i}.w"], p[f"dec{i}.b"])
        _finite(h, f"dec{i}")
        caches.append(c)
    return h, (cd, caches)


def _decode_backward(arch, p, grads, dout, cache):
    cd, caches = cache
    convs = arch.decoder_convs()
    for i in reversed(range(len(convs))):
        dout, grads[f"dec{i}.w"][...], grads[f"dec{i}.b"][...] = conv2d_batch_backward(dout, convs[i], p[f"dec{i}.w"], caches[i])
        if i < len(convs) - 1:
            dout = upsample_nn_batch_backward(dout, 2)
    dz, grads["dec_dense.w"][...], grads["dec_dense.b"][...] = dense_backward(dout.reshape(dout.shape[0], -1), p["dec_dense.w"], cd)
    return dz


def _encode_backward(arch, p, grads, dz, cache):
    caches, cd, pooled_shape = cache
    dflat, grads["enc_dense.w"][...], grads["enc_dense.b"][...] = dense_backward(dz, p["enc_dense.w"], cd)
    dh = dflat.reshape(pooled_shape)
    convs = arch.encoder_convs()
    for i in reversed(range(len(convs))):
        c1, arg = caches[i]
        dh = maxpool2_batch_backward(dh, arg)
        dh, grads[f"enc{i}.w"][...], grads[f"enc{i}.b"][...] = conv2d_batch_backward(dh, convs[i], p[f"enc{i}.w"], c1, need_dx=i > 0)
    return dh


def _as_values(scans):
    """Stack scans (ScanGrid, 2-d array, or 3-d batch) to ``(batch, H, W)``."""
    if hasattr(scans, "values") and hasattr(scans, "mask"):
        if not np.all(scans.mask):
            raise ValueError("scan must be imputed (mask all-true) before encoding")
        return scans.values[None].astype(float)
    if isinstance(scans, (list, tuple)):
        return np.concatenate([_as_values(s) for s in scans])
    a = np.asarray(scans, dtype=float)
    return a[None] if a.ndim == 2 else a


def encode(params: AeParams, scans):
    """Latent codes ``(batch, k)`` for physical-unit scans."""
    x = params.pad(params.standardize(_as_values(scans)))
    z, _ = _encode(params.arch, unpack(params.arch, params.flat), x)
    return z


def decode(params: AeParams, z):
    """Physical-unit reconstructions ``(batch, H, W)`` of latent codes."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != params.k:
        raise ShapeMismatch(f"latent width {z.shape[1]} != k={params.k}")
    out, _ = _decode(params.arch, unpack(params.arch, params.flat), z)
    return params.destandardize(params.crop(out))


def ae_forward(params: AeParams, s):
    """Encode then decode one scan (or a batch). Returns ``(latent, reconstruction)``
    with the reconstruction in physical units on the unpadded grid."""
    values = _as_values(s)
    z = encode(params, values)
    recon = decode(params, z)
    single = hasattr(s, "mask") or np.ndim(s) == 2
    return (z[0], recon[0]) if single else (z, recon)


def loss_and_grad(params: AeParams, x_std, flat=None):
    """Mean squared reconstruction error on standardized, unpadded cells and
    its gradient with respect to the flat parameter vector.

    ``x_std`` has shape ``(batch, H, W)`` in standardized units.
    """
    arch = params.arch
    flat = params.flat if flat is None else flat
    p = unpack(arch, flat)
    grad = np.zeros_like(flat)
    g = unpack(arch, grad)
    x = params.pad(x_std)
    z, ecache = _encode(arch, p, x)
    out, dcache = _decode(arch, p, z)
    resid = params.crop(out) - x_std
    n = resid.size
    loss = float(np.sum(resid * resid) / n)
    dout = np.zeros_like(out)
    h, w = arch.grid_shape
    dout[:, :h, :w, 0] = 2.0 * resid / n
    dz = _decode_backward(arch, p, g, dout, dcache)
    _encode_backward(arch, p, g, dz, ecache)
    return loss, grad


def ae_backward(params: AeParams, s):
    """Gradient of the standardized reconstruction MSE for one scan or batch."""
    return loss_and_grad(params, params.standardize(_as_values(s)))[1]


def normalization_stats(values):
    mean = values.mean(axis=0)
    scale = float(np.sqrt(np.mean((values - mean) ** 2)))
    return mean, (scale if scale > 0 else 1.0)


@dataclass
class AeTrainConfig:
    arch: AeArchitecture = field(default_factory=AeArchitecture)
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(epochs=50))
    init_seed: int = 0

    def to_dict(self):
        return {"arch": self.arch.to_dict(), "adam": self.adam.to_dict(), "init_seed": self.init_seed}


def ae_train(data, cfg: AeTrainConfig | None = None, callback=None):
    """Fit the autoencoder to a dataset (or a ``(n, H, W)`` array of scans).

    Returns ``(AeParams, loss_history)``.
    """
    cfg = cfg or AeTrainConfig()
    tune_allocator()
    values = _as_values(data.scans) if hasattr(data, "scans") else _as_values(data)
    if values.shape[0] == 0:
        raise ValueError("empty training set")
    mean, scale = normalization_stats(values)
    params = AeParams(cfg.arch, init_params(cfg.arch, cfg.init_seed), mean, scale, cfg.adam.seed)
    x_std = params.standardize(values)

    def fg(flat, idx):
        return loss_and_grad(params, x_std[idx], flat)

    flat, history = train_minibatch(fg, params.flat, len(x_std), cfg.adam, callback)
    params.flat = flat
    params.meta = {"train": cfg.to_dict(), "n_train": int(len(x_std)), "final_loss": history[-1] if history else None}
    return params, history


def reconstruction_nmse(params: AeParams, values):
    """Per-scan MSE of encode->decode, divided by each scan's own variance."""
    values = _as_values(values)
    recon = decode(params, encode(params, values))
    err = np.mean((recon - values) ** 2, axis=(1, 2))
    return err / values.var(axis=(1, 2))


def save_ae(params: AeParams, path):
    header = {
        "arch": params.arch.to_dict(),
        "param_count": params.arch.param_count,
        "mean": modelio.encode_array(params.mean),
        "scale": params.scale,
        "seed": params.seed,
        "meta": params.meta,
    }
    return modelio.save_model(path, "ae", header, params.flat)


def load_ae(path) -> AeParams:
    header, flat = modelio.load_model(path, "ae")
    arch = AeArchitecture.from_dict(header["arch"])
    if arch.param_count != header["param_count"] or flat.size != arch.param_count:
        raise modelio.ModelFileError(f"{path}: parameter count {flat.size} does not match architecture ({arch.param_count})")
    return AeParams(arch, flat, modelio.decode_array(header["mean"]), float(header["scale"]), int(header["seed"]), header.get("meta", {}))
