"""Request and response models for the prediction service."""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .. import config


class OperatingPoint(BaseModel):
    """The seven operating-condition inputs of one query."""

    model_config = ConfigDict(extra="forbid")

    scada_ws: float
    met_ws_80m: float
    scada_ti: float
    met_bulk_richardson: float
    scada_power: float
    scada_rpm: float
    scada_pitch: float

    def as_list(self):
        return [getattr(self, name) for name in config.PARAM_NAMES]


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: str = "gp"
    points: List[OperatingPoint] = Field(min_length=1)
    include_field: bool = True
    strict_bounds: bool = False

    @model_validator(mode="after")
    def _bounds(self):
        if self.strict_bounds:
            for p in self.points:
                for name, v in zip(config.PARAM_NAMES, p.as_list()):
                    lo, hi = config.PARAM_BOUNDS[name]
                    if not lo <= v <= hi:
                        raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        return self


class Prediction(BaseModel):
    latent: List[float]
    variance: Optional[List[float]] = None
    field: Optional[List[List[float]]] = None


class PredictResponse(BaseModel):
    model: str
    grid_shape: List[int]
    x_range: List[float]
    r_range: List[float]
    predictions: List[Prediction]


class ModelInfo(BaseModel):
    kind: str
    latent_dim: int
    gives_variance: bool


class ModelsResponse(BaseModel):
    models: Dict[str, ModelInfo]


class Health(BaseModel):
    status: str
    models: List[str]
