"""Minibatch Adam over a flat parameter vector."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DivergedLoss

log = logging.getLogger(__name__)


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, size, cfg: AdamConfig):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        params -= c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)
        return params


def check_loss_trend(history, window=None, rtol=0.02):
    """Warn when the smoothed loss rises over the final half of training.

    The moving-average window defaults to a tenth of the run (at least 5
    epochs); rises within ``rtol`` of the running minimum are tolerated.
    """
    h = np.asarray(history, dtype=float)
    window = window or max(5, h.size // 10)
    if h.size < 2 * window:
        return True
    smooth = np.convolve(h, np.ones(window) / window, mode="valid")
    tail = smooth[len(smooth) // 2 :]
    ok = bool(np.all(tail <= np.minimum.accumulate(tail) * (1.0 + rtol)))
    if not ok:
        warnings.warn("smoothed training loss increased during the final half of training", RuntimeWarning, stacklevel=3)
    return ok


def train_minibatch(loss_and_grad, params, n, cfg: AdamConfig, callback=None):
    """Run Adam over ``epochs`` passes of shuffled minibatches.

    ``loss_and_grad(params, idx)`` returns the mean loss and its gradient on
    the examples ``idx``. Returns the final parameters and the per-epoch
    mean training loss.
    """
    params = np.array(params, dtype=float, copy=True)
    opt = Adam(params.size, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(params, idx)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            opt.step(params, grad)
        history.append(total / n)
        if callback is not None:
            callback(epoch, history[-1])
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    check_loss_trend(history)
    return params, history
