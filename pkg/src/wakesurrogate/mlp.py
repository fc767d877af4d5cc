"""Fully connected ReLU network from operating parameters to latent codes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import config, modelio
from .errors import ShapeMismatch
from .optim import AdamConfig, train_minibatch

DEFAULT_WIDTHS = (config.N_PARAMS, 64, 64, 4)


def scale_inputs(theta):
    """Min-max scale raw parameters to the unit box using the table bounds."""
    theta = np.asarray(theta, dtype=float)
    return (theta - config.PARAM_LOW) / (config.PARAM_HIGH - config.PARAM_LOW)


def layout(widths):
    out = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        out += [(f"w{i}", (b, a)), (f"b{i}", (b,))]
    return out


def param_count(widths):
    return sum(int(np.prod(s)) for _, s in layout(widths))


@dataclass
class MlpParams:
    widths: tuple
    flat: np.ndarray
    y_mean: np.ndarray = None
    y_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.size != param_count(self.widths):
            raise ShapeMismatch(f"{self.flat.size} parameters for widths {self.widths}")
        k = self.widths[-1]
        self.y_mean = np.zeros(k) if self.y_mean is None else np.asarray(self.y_mean, float)
        self.y_std = np.ones(k) if self.y_std is None else np.asarray(self.y_std, float)

    def layers(self, flat=None):
        flat = self.flat if flat is None else flat
        views, pos = [], 0
        for _, shape in layout(self.widths):
            size = int(np.prod(shape))
            views.append(flat[pos : pos + size].reshape(shape))
            pos += size
        return list(zip(views[0::2], views[1::2]))

    def predict(self, theta):
        """Latent codes for raw (unscaled) parameter rows."""
        t = scale_inputs(np.atleast_2d(theta))
        return mlp_forward(self, t) * self.y_std + self.y_mean


def init_params(widths, seed=0):
    rng = np.random.default_rng(seed)
    flat = np.zeros(param_count(widths))
    p = MlpParams(widths, flat)
    for w, _ in p.layers(flat):
        bound = np.sqrt(6.0 / w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return flat


def _forward(params, x, flat=None):
    acts = [x]
    pre = []
    layers = params.layers(flat)
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if i < len(layers) - 1 else z)
    return acts, pre


def mlp_forward(params: MlpParams, x):
    """Network output for already-scaled input(s): ReLU hidden layers, affine output."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.widths[0]:
        raise ShapeMismatch(f"input width {x.shape[1]} != {params.widths[0]}")
    out = _forward(params, x)[0][-1]
    return out[0] if single else out


def mlp_loss(params: MlpParams, inputs, targets, flat=None):
    """Mean over the batch of the squared Euclidean error."""
    inputs = np.atleast_2d(np.asarray(inputs, float))
    targets = np.atleast_2d(np.asarray(targets, float))
    if len(inputs) == 0:
        raise ValueError("empty batch")
    out = _forward(params, inputs, flat)[0][-1]
    return float(np.sum((out - targets) ** 2) / len(inputs))


def mlp_loss_and_grad(params: MlpParams, inputs, targets, flat=None):
    flat = params.flat if flat is None else flat
    acts, pre = _forward(params, inputs, flat)
    n = len(inputs)
    resid = acts[-1] - targets
    loss = float(np.sum(resid**2) / n)
    grad = np.zeros_like(flat)
    glayers = params.layers(grad)
    layers = params.layers(flat)
    delta = 2.0 * resid / n
    for i in reversed(range(len(layers))):
        if i < len(layers) - 1:
            delta = delta * (pre[i] > 0)
        gw, gb = glayers[i]
        gw[...] = delta.T @ acts[i]
        gb[...] = delta.sum(axis=0)
        delta = delta @ layers[i][0]
    return loss, grad


@dataclass
class MlpTrainConfig:
    widths: tuple = DEFAULT_WIDTHS
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(epochs=300))
    init_seed: int = 0

    def to_dict(self):
        return {"widths": list(self.widths), "adam": self.adam.to_dict(), "init_seed": self.init_seed}


def mlp_train(theta, latents, cfg: MlpTrainConfig | None = None, scaled=False):
    """Fit the network to ``(theta, latent)`` pairs.

    ``theta`` are raw parameter rows unless ``scaled`` is true. Targets are
    standardized per latent dimension; statistics are kept on the result.
    Returns ``(MlpParams, loss_history)``.
    """
    cfg = cfg or MlpTrainConfig()
    theta = np.atleast_2d(np.asarray(theta, float))
    y = np.atleast_2d(np.asarray(latents, float))
    if len(theta) < 1 or len(theta) != len(y):
        raise ValueError("need >= 1 pair and matching lengths")
    widths = tuple(cfg.widths)
    if widths[0] != theta.shape[1] or widths[-1] != y.shape[1]:
        widths = (theta.shape[1], *widths[1:-1], y.shape[1])
    x = theta if scaled else scale_inputs(theta)
    y_mean = y.mean(axis=0)
    y_std = y.std(axis=0)
    y_std[y_std == 0] = 1.0
    ys = (y - y_mean) / y_std
    params = MlpParams(widths, init_params(widths, cfg.init_seed), y_mean, y_std)

    def fg(flat, idx):
        return mlp_loss_and_grad(params, x[idx], ys[idx], flat)

    flat, history = train_minibatch(fg, params.flat, len(x), cfg.adam)
    params.flat = flat
    params.meta = {"train": cfg.to_dict(), "n_train": int(len(x))}
    return params, history


def save_mlp(params: MlpParams, path):
    header = {
        "widths": list(params.widths),
        "param_count": param_count(params.widths),
        "y_mean": modelio.encode_array(params.y_mean),
        "y_std": modelio.encode_array(params.y_std),
        "input_scaling": "minmax-table-bounds",
        "meta": params.meta,
    }
    return modelio.save_model(path, "mlp", header, params.flat)


def load_mlp(path) -> MlpParams:
    header, flat = modelio.load_model(path, "mlp")
    widths = tuple(header["widths"])
    if param_count(widths) != flat.size:
        raise modelio.ModelFileError(f"{path}: parameter count {flat.size} does not match widths {widths}")
    return MlpParams(widths, flat, modelio.decode_array(header["y_mean"]), modelio.decode_array(header["y_std"]), header.get("meta", {}))
