"""Multi-output latent regressors behind one interface, and their model files.

Every regressor maps raw parameter rows to latent codes. Inputs are
min-max scaled to the unit box with the table bounds; the GP variants fit
one independent scalar model per latent dimension.

GP and SVGP files store hyperparameters and standardization statistics
plus a reference to the training tables (path relative to the model file,
row indices and SHA-256). The Cholesky factors are re-derived on load.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config, formats, modelio
from . import gp as gpx
from . import mlp as mlpx
from . import svgp as svgpx
from .errors import ModelFileError, ShapeMismatch
from .mlp import scale_inputs

KINDS = ("mlp", "gp", "svgp")


def latent_threads(k):
    cap = os.environ.get("WAKE_LATENT_THREADS")
    n = int(cap) if cap else os.cpu_count() or 1
    return max(1, min(k, n))


def _map_dims(fn, dims):
    dims = list(dims)
    workers = latent_threads(len(dims))
    if workers == 1:
        return [fn(d) for d in dims]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, dims))  # results keep dimension order


class GpRegressor:
    """Independent scalar GP (exact or sparse) per latent dimension."""

    def __init__(self, kind, models, dims, source=None):
        if kind not in ("gp", "svgp"):
            raise ValueError(f"unknown GP kind {kind!r}")
        self.kind = kind
        self.models = list(models)
        self.dims = list(dims)
        self.source = source  # training data reference

    @classmethod
    def fit(cls, kind, theta, Z, dims=None, seed=0, n_starts=None, m=64, source=None):
        X = scale_inputs(np.atleast_2d(theta))
        Z = np.atleast_2d(np.asarray(Z, float))
        if len(X) != len(Z):
            raise ShapeMismatch(f"{len(X)} parameter rows vs {len(Z)} latent rows")
        dims = list(range(Z.shape[1])) if dims is None else [int(d) for d in dims]

        def one(d):
            s = [seed, d]
            if kind == "gp":
                return gpx.gp_fit(X, Z[:, d], n_starts=n_starts or 8, seed=s)
            return svgpx.svgp_fit(X, Z[:, d], m=min(m, len(X)), n_starts=n_starts or 3, seed=s)

        return cls(kind, _map_dims(one, dims), dims, source)

    def predict(self, theta):
        """``(mean, variance)`` arrays of shape ``(n, len(dims))`` in latent units."""
        X = scale_inputs(np.atleast_2d(theta))
        out = [m.predict(X) for m in self.models]
        mean = np.column_stack([np.atleast_1d(o[0]) for o in out])
        var = np.column_stack([np.atleast_1d(o[1]) for o in out])
        return mean, var

    # -- files -----------------------------------------------------------
    def save(self, path):
        path = Path(path)
        dims = []
        for d, m in zip(self.dims, self.models):
            entry = {"dim": d, "lengthscale": m.lengthscale, "noise": m.noise, "jitter": m.jitter,
                     "y_mean": m.y_mean, "y_std": m.y_std, "meta": m.meta}
            if self.kind == "svgp":
                entry["inducing"] = modelio.encode_array(m.Z)
            dims.append(entry)
        header = {"kernel": {"family": "matern", "nu": 1.5}, "input_scaling": "minmax-table-bounds",
                  "refactorize_on_load": True, "dims": dims, "training_data": self._data_ref(path)}
        return modelio.save_model(path, self.kind, header)

    def _data_ref(self, path):
        src = self.source
        if src is None or "params" not in src:
            # no files to point at: embed the (scaled) training inputs and targets
            X = self.models[0].X
            Y = np.column_stack([m.y * m.y_std + m.y_mean for m in self.models])
            return {"embedded": True, "X": modelio.encode_array(X), "Y": modelio.encode_array(Y)}
        base = path.resolve().parent
        ref = {"embedded": False, "rows": src.get("rows")}
        for key in ("params", "latents"):
            p = Path(src[key]).resolve()
            ref[key] = os.path.relpath(p, base)
            ref[key + "_sha256"] = modelio.file_sha256(p)
        return ref

    @classmethod
    def load(cls, path, kind=None):
        path = Path(path)
        header, _ = modelio.load_model(path, kind)
        doc_kind = modelio.read_kind(path)
        X, Y = _load_training(path, header["training_data"])
        models, dims = [], []
        for e in header["dims"]:
            d = e["dim"]
            y = Y[:, d] if Y.shape[1] > d else Y[:, 0]
            ys = (y - e["y_mean"]) / e["y_std"]
            if doc_kind == "gp":
                m = gpx.assemble(X, ys, e["lengthscale"], e["noise"], e["jitter"], y_mean=e["y_mean"],
                                 y_std=e["y_std"], meta=e.get("meta"))
            else:
                m = svgpx.build(e["lengthscale"], e["noise"], modelio.decode_array(e["inducing"]), X, ys,
                                e["jitter"], e["y_mean"], e["y_std"], e.get("meta"))
            models.append(m)
            dims.append(d)
        src = None
        if not header["training_data"].get("embedded"):
            ref = header["training_data"]
            src = {"params": path.parent / ref["params"], "latents": path.parent / ref["latents"], "rows": ref["rows"]}
        return cls(doc_kind, models, dims, src)


def _load_training(path, ref):
    if ref.get("embedded"):
        X = modelio.decode_array(ref["X"])
        Y = np.atleast_2d(modelio.decode_array(ref["Y"]))
        return X, Y.reshape(len(X), -1)
    base = Path(path).parent
    files = {}
    for key in ("params", "latents"):
        p = base / ref[key]
        if not p.exists():
            raise ModelFileError(f"{path}: training data {p} not found")
        if modelio.file_sha256(p) != ref[key + "_sha256"]:
            raise ModelFileError(f"{path}: training data {p} changed since the model was fitted")
        files[key] = p
    theta = formats.read_params_csv(files["params"])
    Z = formats.read_latents_csv(files["latents"])
    rows = ref.get("rows")
    if rows is not None:
        theta, Z = theta[rows], Z[rows]
    return scale_inputs(theta), Z


class MlpRegressor:
    kind = "mlp"

    def __init__(self, params: mlpx.MlpParams):
        self.params = params

    @classmethod
    def fit(cls, theta, Z, seed=0, epochs=300, widths=None, **_):
        cfg = mlpx.MlpTrainConfig(
            widths=tuple(widths) if widths else (config.N_PARAMS, 64, 64, np.shape(Z)[1]),
            adam=mlpx.AdamConfig(epochs=epochs, seed=seed),
            init_seed=seed,
        )
        params, _ = mlpx.mlp_train(theta, Z, cfg)
        return cls(params)

    def predict(self, theta):
        return self.params.predict(theta), None

    def save(self, path):
        return mlpx.save_mlp(self.params, path)

    @classmethod
    def load(cls, path):
        return cls(mlpx.load_mlp(path))


def load_regressor(path):
    kind = modelio.read_kind(path)
    if kind == "mlp":
        return MlpRegressor.load(path)
    if kind in ("gp", "svgp"):
        return GpRegressor.load(path)
    raise ModelFileError(f"{path}: {kind!r} is not a latent regressor")
