"""Evaluation utilities shared by all latent-space regressors."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .errors import DegenerateVariance, ShapeMismatch

KDE_POINTS = 256
KDE_SPAN = 4.0  # curve covers [min - 4h, max + 4h]
OUTLIER_FACTOR = 3.0


def r_squared(actual, predicted) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    actual = np.asarray(actual, float).ravel()
    predicted = np.asarray(predicted, float).ravel()
    if actual.shape != predicted.shape:
        raise ShapeMismatch(f"{actual.size} actual vs {predicted.size} predicted values")
    if actual.size < 2:
        raise ValueError("need at least two points")
    ss_tot = np.sum((actual - actual.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateVariance("actual values are constant")
    return float(1.0 - np.sum((actual - predicted) ** 2) / ss_tot)


def rmse(actual, predicted) -> float:
    d = np.asarray(actual, float) - np.asarray(predicted, float)
    return float(np.sqrt(np.mean(d * d)))


def silverman_bandwidth(x) -> float:
    """Silverman's rule, falling back to a scale-aware width for constant data."""
    x = np.asarray(x, float)
    n = x.size
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    if spread > 0:
        return float(0.9 * spread * n ** -0.2)
    return float(max(abs(x[0]), 1.0) * 1e-3)


def error_kde(errors, bandwidth=None):
    """Gaussian kernel density of ``errors`` sampled on 256 even points.

    Returns ``(grid, density, h)``.
    """
    x = np.asarray(errors, float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - KDE_SPAN * h, x.max() + KDE_SPAN * h, KDE_POINTS)
    u = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * h * np.sqrt(2.0 * np.pi))
    return grid, dens, h


def sorted_errors(errors):
    return np.sort(np.asarray(errors, float).ravel())


def outlier_fraction(errors, factor=OUTLIER_FACTOR) -> float:
    e = np.asarray(errors, float)
    return float(np.mean(e > factor * np.median(e)))


def _nmse(recon, truth):
    err = np.mean((recon - truth) ** 2, axis=(1, 2))
    return err / truth.var(axis=(1, 2))


def physical_reconstruction_error(z_pred, params: ae.AeParams, scans):
    """Per-scan normalized MSE of decoded predictions and the decoded-exact floor.

    ``scans`` are the true fields ``(n, H, W)`` (or ScanGrids). Returns
    ``(errors, floor)``, each of length n.
    """
    truth = ae._as_values(scans)
    z_pred = np.atleast_2d(np.asarray(z_pred, float))
    if len(z_pred) != len(truth):
        raise ShapeMismatch(f"{len(z_pred)} predictions for {len(truth)} scans")
    errors = _nmse(ae.decode(params, z_pred), truth)
    floor = _nmse(ae.decode(params, ae.encode(params, truth)), truth)
    return errors, floor


@dataclass
class EvalReport:
    model: str
    test_hash: str
    r2: list
    rmse: list
    physical: np.ndarray
    floor: np.ndarray
    actual: np.ndarray  # (n, k) true latents
    predicted: np.ndarray  # (n, k)
    outlier_factor: float = OUTLIER_FACTOR
    config: dict = field(default_factory=dict)

    @property
    def physical_mean(self):
        return float(np.mean(self.physical))

    @property
    def floor_mean(self):
        return float(np.mean(self.floor))

    def summary(self):
        grid, dens, h = error_kde(self.physical)
        return {
            "model": self.model,
            "test_hash": self.test_hash,
            "n_test": int(len(self.physical)),
            "r2": [float(v) for v in self.r2],
            "rmse": [float(v) for v in self.rmse],
            "physical_mean_nmse": self.physical_mean,
            "physical_median_nmse": float(np.median(self.physical)),
            "floor_mean_nmse": self.floor_mean,
            "outlier_factor": self.outlier_factor,
            "outlier_fraction": outlier_fraction(self.physical, self.outlier_factor),
            "kde_bandwidth": h,
            "kde_integral": float(np.trapezoid(dens, grid)),
            "config": self.config,
        }

    def write(self, outdir):
        """JSON summary plus CSVs of pairs, sorted errors and KDE samples."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.summary(), sort_keys=True, indent=1))
        k = self.actual.shape[1]
        with open(out / "pairs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row"] + [f"actual_{j}" for j in range(k)] + [f"predicted_{j}" for j in range(k)])
            for i in range(len(self.actual)):
                w.writerow([i] + [repr(float(v)) for v in self.actual[i]] + [repr(float(v)) for v in self.predicted[i]])
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "nmse", "floor"])
            for i, (e, f) in enumerate(zip(self.physical, self.floor)):
                w.writerow([i, repr(float(e)), repr(float(f))])
        with open(out / "sorted_errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "nmse"])
            for i, e in enumerate(sorted_errors(self.physical)):
                w.writerow([i, repr(float(e))])
        grid, dens, _ = error_kde(self.physical)
        with open(out / "kde.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nmse", "density"])
            for g, d in zip(grid, dens):
                w.writerow([repr(float(g)), repr(float(d))])
        return out / "report.json"


def evaluate(model_name, z_true, z_pred, params: ae.AeParams, scans, test_hash, config=None):
    z_true = np.atleast_2d(np.asarray(z_true, float))
    z_pred = np.atleast_2d(np.asarray(z_pred, float))
    if z_true.shape != z_pred.shape:
        raise ShapeMismatch(f"latent shapes {z_true.shape} vs {z_pred.shape}")
    r2 = [r_squared(z_true[:, j], z_pred[:, j]) for j in range(z_true.shape[1])]
    err = [rmse(z_true[:, j], z_pred[:, j]) for j in range(z_true.shape[1])]
    phys, floor = physical_reconstruction_error(z_pred, params, scans)
    return EvalReport(model_name, test_hash, r2, err, phys, floor, z_true, z_pred, config=config or {})


def load_report(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text())
