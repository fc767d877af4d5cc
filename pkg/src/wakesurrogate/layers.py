"""Convolution, max-pool and nearest-neighbour upsampling with hand-written
backward passes.

Batched routines work channels-last, on arrays of shape
``(batch, H, W, channels)``, so the patch gather and scatter copy
contiguous channel vectors. Filters keep the ``(filters, channels, fh, fw)``
layout. The single-sample wrappers ``conv2d_forward``, ``maxpool2_forward``
and ``upsample_nn`` take channels-first ``(channels, H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    filter_count: int
    filter_size: tuple = (3, 3)
    stride: int = 1
    padding: tuple = (1, 1)
    activation: str = "relu"

    def __post_init__(self):
        fh, fw = self.filter_size
        if fh % 2 == 0 or fw % 2 == 0:
            raise ValueError("filter sizes must be odd")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def weight_shape(self):
        return (self.filter_count, self.in_channels, *self.filter_size)

    def output_hw(self, h, w):
        fh, fw = self.filter_size
        ph, pw = self.padding
        return (h + 2 * ph - fh) // self.stride + 1, (w + 2 * pw - fw) // self.stride + 1


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activate_grad(dout, z, activation):
    return dout * (z > 0) if activation == "relu" else dout


def _taps(layer, ho, wo):
    """Slices of the padded input read by each filter tap, row-major."""
    fh, fw = layer.filter_size
    s = layer.stride
    return [
        (slice(u, u + s * (ho - 1) + 1, s), slice(v, v + s * (wo - 1) + 1, s))
        for u in range(fh)
        for v in range(fw)
    ]


def _weight_matrix(weights):
    # rows ordered (u, v, c) to match the gathered patches
    f, c, fh, fw = weights.shape
    return weights.transpose(2, 3, 1, 0).reshape(fh * fw * c, f)


def conv2d_batch(x, layer: ConvLayerSpec, weights, biases):
    """Channels-last convolution. Returns ``(output, cache)``."""
    if x.ndim != 4 or x.shape[3] != layer.in_channels:
        raise ShapeMismatch(f"input {x.shape} incompatible with {layer.in_channels} channels")
    if weights.shape != layer.weight_shape or biases.shape != (layer.filter_count,):
        raise ShapeMismatch(f"weights {weights.shape}/biases {biases.shape} do not match {layer}")
    b, h, w, c = x.shape
    ph, pw = layer.padding
    ho, wo = layer.output_hw(h, w)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"filter larger than padded input {x.shape}")
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    cols = np.concatenate([xp[:, su, sv, :] for su, sv in _taps(layer, ho, wo)], axis=-1)
    cols = cols.reshape(b * ho * wo, -1)
    z = (cols @ _weight_matrix(weights) + biases).reshape(b, ho, wo, layer.filter_count)
    return _activate(z, layer.activation), (x.shape, cols, z)


def conv2d_batch_backward(dout, layer: ConvLayerSpec, weights, cache, need_dx=True):
    """Gradients ``(dx, dweights, dbiases)`` for one convolution layer.

    ``dx`` is None when ``need_dx`` is false (first layer of a network).
    """
    (b, h, w, c), cols, z = cache
    fh, fw = layer.filter_size
    ph, pw = layer.padding
    dz = _activate_grad(dout, z, layer.activation)
    ho, wo = dz.shape[1:3]
    dz2 = dz.reshape(-1, layer.filter_count)
    dw = (cols.T @ dz2).reshape(fh, fw, c, layer.filter_count).transpose(3, 2, 0, 1)
    db = dz2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    if layer.stride == 1 and layer.filter_count <= c:
        # dx is a full correlation of dz with the flipped, transposed filters
        back = ConvLayerSpec(layer.filter_count, c, layer.filter_size, 1, (fh - 1 - ph, fw - 1 - pw), "identity")
        flipped = weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = conv2d_batch(dz, back, np.ascontiguousarray(flipped), np.zeros(c))
        return dx, dw, db
    dcols = (dz2 @ _weight_matrix(weights).T).reshape(b, ho, wo, fh * fw, c)
    dxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c))
    for i, (su, sv) in enumerate(_taps(layer, ho, wo)):
        dxp[:, su, sv, :] += dcols[:, :, :, i, :]
    return dxp[:, ph : ph + h, pw : pw + w, :], dw, db


def conv2d_forward(x, layer: ConvLayerSpec, weights, biases):
    """Single-sample convolution of a ``(channels, H, W)`` array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ShapeMismatch("expected a (channels, H, W) array")
    out, _ = conv2d_batch(x.transpose(1, 2, 0)[None], layer, np.asarray(weights, float), np.asarray(biases, float))
    return out[0].transpose(2, 0, 1)


def maxpool2_batch(x):
    """Channels-last 2x2 max-pool. Ties go to the first window cell in
    row-major order. Returns ``(output, argmax)`` with argmax in ``0..3``."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"max-pool needs even spatial dims, got {(h, w)}")
    win = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_batch_backward(dout, arg):
    b, h2, w2, c = dout.shape
    onehot = np.zeros((b, h2, w2, c, 4))
    np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
    return onehot.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)


def maxpool2_forward(x):
    """Single-sample max-pool of ``(channels, H, W)``.

    Returns the pooled array and, per output cell, the ``(row, col)`` offset
    of the maximum inside its window, shaped ``(channels, H/2, W/2, 2)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ShapeMismatch("expected a (channels, H, W) array")
    out, arg = maxpool2_batch(x.transpose(1, 2, 0)[None])
    arg = arg[0].transpose(2, 0, 1)
    return out[0].transpose(2, 0, 1), np.stack(np.divmod(arg, 2), axis=-1)


def upsample_nn(x, factor: int = 2, axes=(-2, -1)):
    """Replicate every value into a ``factor x factor`` block over ``axes``."""
    if factor < 2:
        raise ValueError("factor must be >= 2")
    x = np.asarray(x)
    return np.repeat(np.repeat(x, factor, axis=axes[0]), factor, axis=axes[1])


def upsample_nn_batch_backward(dout, factor: int = 2):
    """Sum gradients over each replicated block (channels-last batch)."""
    b, h, w, c = dout.shape
    return dout.reshape(b, h // factor, factor, w // factor, factor, c).sum(axis=(2, 4))


def dense_forward(x, weights, biases, activation="identity"):
    z = x @ weights.T + biases
    return _activate(z, activation), (x, z)


def dense_backward(dout, weights, cache, activation="identity"):
    x, z = cache
    dz = _activate_grad(dout, z, activation)
    return dz @ weights, dz.T @ x, dz.sum(axis=0)
