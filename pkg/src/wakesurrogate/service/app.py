"""FastAPI app serving parameter -> wake-field predictions."""

from __future__ import annotations

import os

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import config
from ..surrogate import load_artifacts
from .schemas import Health, ModelInfo, ModelsResponse, Prediction, PredictRequest, PredictResponse

ARTIFACTS_ENV = "WAKE_ARTIFACTS"


def create_app(artifacts=None, surrogates=None) -> FastAPI:
    """Build the app from a pipeline output directory or ready surrogates."""
    if surrogates is None:
        root = artifacts or os.environ.get(ARTIFACTS_ENV)
        if root is None:
            raise ValueError(f"give an artifact directory or set {ARTIFACTS_ENV}")
        surrogates = load_artifacts(root)
    app = FastAPI(title="wake surrogate", version="0.1.0")
    app.state.surrogates = surrogates

    @app.get("/health", response_model=Health)
    def health():
        return Health(status="ok", models=sorted(surrogates))

    @app.get("/models", response_model=ModelsResponse)
    def models():
        info = {
            k: ModelInfo(kind=s.regressor.kind, latent_dim=s.ae.k, gives_variance=s.regressor.kind != "mlp")
            for k, s in surrogates.items()
        }
        return ModelsResponse(models=info)

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        s = surrogates.get(req.model)
        if s is None:
            raise HTTPException(status_code=404, detail=f"no model {req.model!r}; have {sorted(surrogates)}")
        theta = np.array([p.as_list() for p in req.points])
        z, field, var = s.predict(theta)
        preds = [
            Prediction(
                latent=z[i].tolist(),
                variance=None if var is None else var[i].tolist(),
                field=field[i].tolist() if req.include_field else None,
            )
            for i in range(len(theta))
        ]
        return PredictResponse(
            model=req.model,
            grid_shape=[config.GRID_ROWS, config.GRID_COLS],
            x_range=list(config.X_RANGE),
            r_range=list(config.R_RANGE),
            predictions=preds,
        )

    return app
