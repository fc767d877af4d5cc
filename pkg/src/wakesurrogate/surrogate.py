"""Parameter -> wake-field surrogate: a latent regressor followed by the decoder."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .regressors import load_regressor


class WakeSurrogate:
    def __init__(self, ae_params: ae.AeParams, regressor, name=None):
        self.ae = ae_params
        self.regressor = regressor
        self.name = name or regressor.kind

    @classmethod
    def from_files(cls, ae_path, model_path, name=None):
        return cls(ae.load_ae(ae_path), load_regressor(model_path), name)

    def predict(self, theta):
        """``(latent, field, variance)`` for raw parameter rows.

        ``field`` has shape ``(n, 61, 41)``; ``variance`` is the latent
        posterior variance for GP regressors and None otherwise.
        """
        theta = np.atleast_2d(np.asarray(theta, float))
        z, var = self.regressor.predict(theta)
        return z, ae.decode(self.ae, z), var


def load_artifacts(root):
    """All surrogates found in a pipeline output directory, keyed by kind."""
    root = Path(root)
    params = ae.load_ae(root / "models" / "ae.model")
    out = {}
    for kind in ("mlp", "gp", "svgp"):
        p = root / "models" / f"{kind}.model"
        if p.exists():
            out[kind] = WakeSurrogate(params, load_regressor(p), kind)
    return out
