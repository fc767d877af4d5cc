"""Synthetic wake fields seen through a virtual LiDAR post-processing chain.

The ground truth is a Gaussian-deficit engineering wake whose expansion
rate follows turbulence intensity and atmospheric stability, and whose
strength follows a thrust proxy built from SCADA power and wind speed.
Scans are corrupted with Gaussian noise, isolated dropouts and a
contiguous arc of rejected rays, then imputed back to a full grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage
from scipy.stats import norm, qmc

from . import config
from .errors import GeometryDegenerate, RowAllMissing


@dataclass(frozen=True)
class ParamVector:
    """Operating conditions of one scan (units as in the SCADA/met feeds)."""

    scada_ws: float
    met_ws_80m: float
    scada_ti: float
    met_bulk_richardson: float
    scada_power: float
    scada_rpm: float
    scada_pitch: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in config.PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != config.N_PARAMS:
            raise ValueError(f"expected {config.N_PARAMS} values, got {values.size}")
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def in_bounds(self) -> bool:
        a = self.as_array()
        return bool(np.all(a >= config.PARAM_LOW) and np.all(a <= config.PARAM_HIGH))

    def validate(self) -> "ParamVector":
        a = self.as_array()
        for name, v, lo, hi in zip(config.PARAM_NAMES, a, config.PARAM_LOW, config.PARAM_HIGH):
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        return self


@dataclass
class ScanGrid:
    values: np.ndarray
    mask: np.ndarray
    x_coords: np.ndarray = field(default_factory=lambda: config.grid_coords()[0])
    r_coords: np.ndarray = field(default_factory=lambda: config.grid_coords()[1])

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask must share a shape")
        if self.values.shape != (len(self.x_coords), len(self.r_coords)):
            raise ValueError("grid shape does not match coordinates")

    @property
    def shape(self):
        return self.values.shape

    def copy(self) -> "ScanGrid":
        return ScanGrid(self.values.copy(), self.mask.copy(), self.x_coords.copy(), self.r_coords.copy())

    def __eq__(self, other):
        if not isinstance(other, ScanGrid):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.x_coords, other.x_coords)
            and np.array_equal(self.r_coords, other.r_coords)
        )


@dataclass(frozen=True)
class LidarGeometry:
    azimuth: float  # degrees
    elevation: float  # degrees
    wind_direction: float  # degrees


@dataclass
class Dataset:
    params: list
    scans: list
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.params) != len(self.scans):
            raise ValueError("params and scans must have the same length")

    def __len__(self):
        return len(self.params)

    def param_matrix(self) -> np.ndarray:
        return np.vstack([p.as_array() for p in self.params])

    def value_stack(self) -> np.ndarray:
        return np.stack([s.values for s in self.scans])

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        return Dataset([self.params[i] for i in idx], [self.scans[i] for i in idx], self.seed, dict(self.config))


# ----------------------------------------------------------------------------
# physics


def thrust_proxy(p: ParamVector) -> float:
    w = config.WAKE
    area = math.pi * w["rotor_diameter"] ** 2 / 4.0
    available = 0.5 * w["rho_ref"] * area * p.scada_ws**3 * w["efficiency"]
    ct = w["ct_scale"] * (p.scada_power * 1e3 / available)
    return min(max(ct, w["ct_min"]), w["ct_max"])


def expansion_rate(p: ParamVector) -> float:
    w = config.WAKE
    return w["k_ti"] * p.scada_ti * (1.0 + w["k_ri"] * p.met_bulk_richardson)


def wake_width(p: ParamVector, x):
    """Wake width sigma(x)/d at downstream distance x (in d)."""
    return expansion_rate(p) * np.asarray(x, dtype=float) + config.WAKE["sigma0"]


def ground_truth_wake(p: ParamVector, x, r):
    """Normalized velocity u/u_inf of the Gaussian-deficit wake.

    ``x`` and ``r`` broadcast against each other; both are in rotor diameters.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(x < 0):
        raise ValueError("downstream distance must be non-negative")
    w = config.WAKE
    ct = thrust_proxy(p)
    sigma = wake_width(p, x)
    peak = 1.0 - np.sqrt(np.maximum(0.0, 1.0 - ct / (8.0 * sigma**2)))
    with np.errstate(over="ignore", invalid="ignore"):
        shape = np.exp(-(r**2) / (2.0 * sigma**2))
    u = 1.0 - peak * shape
    u = np.clip(u, w["u_floor"], w["u_ceiling"])
    return u if u.ndim else float(u)


def wake_field(p: ParamVector) -> np.ndarray:
    x, r = config.grid_coords()
    return ground_truth_wake(p, x[:, None], r[None, :])


def equivalent_velocity(u_los: float, g: LidarGeometry, eps: float = 1e-3) -> float:
    """Horizontal equivalent velocity from a line-of-sight measurement."""
    proj = math.cos(math.radians(g.azimuth - g.wind_direction)) * math.cos(math.radians(g.elevation))
    if proj <= eps:
        raise GeometryDegenerate(f"beam projection {proj:.3g} <= {eps}")
    return u_los / proj


# ----------------------------------------------------------------------------
# measurement chain

_LIDAR_ORIGIN = (-1.0, 0.0)  # (x, r) of the virtual scanner, in d


def _arc_blackout(rng, dropout_rate, x, r):
    """Wedge of rays beyond a random range gate, as seen from the scanner."""
    xx, rr = np.meshgrid(x, r, indexing="ij")
    dx = xx - _LIDAR_ORIGIN[0]
    dr = rr - _LIDAR_ORIGIN[1]
    angle = np.arctan2(dr, dx)
    dist = np.hypot(dx, dr)
    centre = rng.uniform(-0.35, 0.35)
    half_width = 0.5 * rng.uniform(0.5, 1.0) * dropout_rate
    gate = rng.uniform(3.0, 5.0)
    return (np.abs(angle - centre) <= half_width) & (dist >= gate)


def simulate_scan(p: ParamVector, noise_sd: float = config.DEFAULT_NOISE_SD,
                  dropout_rate: float = config.DEFAULT_DROPOUT, seed=0,
                  speedup: bool = False) -> ScanGrid:
    """One noisy, partially rejected scan of the wake of ``p``.

    ``seed`` may be an int or anything ``numpy.random.default_rng`` accepts.
    ``speedup`` adds a lateral speed-up lobe on the negative-r side, the kind
    of feature that is rare in training data.
    """
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    if not 0.0 <= dropout_rate <= 0.3:
        raise ValueError("dropout_rate must lie in [0, 0.3]")
    rng = np.random.default_rng(seed)
    x, r = config.grid_coords()
    values = wake_field(p)
    if speedup:
        xx, rr = np.meshgrid(x, r, indexing="ij")
        values = values + 0.15 * np.exp(-((rr + 1.2) ** 2) / 0.08) * (1 - np.exp(-xx))
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, size=values.shape)
    values = np.clip(values, config.WAKE["u_floor"], config.WAKE["u_ceiling"])
    mask = np.ones(values.shape, dtype=bool)
    if dropout_rate > 0:
        mask &= rng.random(values.shape) >= dropout_rate
        mask &= ~_arc_blackout(rng, dropout_rate, x, r)
        # an all-rejected row cannot be interpolated; keep its best-CNR cell
        for i in np.flatnonzero(~mask.any(axis=1)):
            mask[i, values.shape[1] // 2] = True
    return ScanGrid(values, mask, x, r)


def impute_missing(s: ScanGrid, power: float = 2.0) -> ScanGrid:
    """Fill invalid cells by inverse-distance weighting over a growing window.

    The window radius (in cells) grows until at least three originally valid
    cells fall inside it. Valid cells are left untouched.
    """
    valid = s.mask
    if np.any(~valid.any(axis=1)):
        rows = np.flatnonzero(~valid.any(axis=1)).tolist()
        raise RowAllMissing(f"rows {rows} have no valid cells")
    out = s.values.copy()
    todo = ~valid
    if not todo.any():
        return ScanGrid(out, np.ones_like(valid), s.x_coords, s.r_coords)

    dx = float(np.mean(np.diff(s.x_coords)))
    dr = float(np.mean(np.diff(s.r_coords)))
    data = np.where(valid, s.values, 0.0)
    vmask = valid.astype(float)
    max_radius = max(s.shape)
    for radius in range(1, max_radius + 1):
        off = np.arange(-radius, radius + 1)
        dist = np.hypot(off[:, None] * dx, off[None, :] * dr)
        weights = np.zeros_like(dist)
        weights[dist > 0] = dist[dist > 0] ** -power
        num = ndimage.correlate(data, weights, mode="constant", cval=0.0)
        den = ndimage.correlate(vmask, weights, mode="constant", cval=0.0)
        count = ndimage.correlate(vmask, np.ones_like(weights), mode="constant", cval=0.0)
        ready = todo & (np.rint(count) >= 3)
        if radius == max_radius:
            ready = todo & (den > 0)
        out[ready] = num[ready] / den[ready]
        todo &= ~ready
        if not todo.any():
            break
    return ScanGrid(out, np.ones_like(valid), s.x_coords, s.r_coords)


# ----------------------------------------------------------------------------
# corpus


def sample_params(n: int, seed) -> list:
    """Latin-hypercube draw of ``n`` operating points inside the parameter box.

    Wind speed, TI and Richardson number are sampled directly; the met-tower
    speed, power, RPM and pitch are derived from wind speed through a
    power-curve proxy plus jitter, then clipped to their bounds.
    """
    rng = np.random.default_rng(seed)
    u = qmc.LatinHypercube(d=config.N_PARAMS, seed=rng).random(n)
    lo, hi = config.PARAM_LOW, config.PARAM_HIGH
    pc = config.POWER_CURVE
    z = norm.ppf(np.clip(u, 1e-6, 1 - 1e-6))

    ws = lo[0] + (hi[0] - lo[0]) * u[:, 0]
    met = ws * (1.0 + pc["met_ws_jitter"] * z[:, 1])
    ti = lo[2] + (hi[2] - lo[2]) * u[:, 2]
    ri = lo[3] + (hi[3] - lo[3]) * u[:, 3]
    frac = (ws**3 - pc["cut_in"] ** 3) / (pc["rated_ws"] ** 3 - pc["cut_in"] ** 3)
    power = pc["rated_power"] * np.clip(frac, 0.0, 1.0) * (1.0 + pc["power_jitter"] * z[:, 4])
    rpm_frac = np.clip((ws - pc["cut_in"]) / (pc["rpm_rated_ws"] - pc["cut_in"]), 0.0, 1.0)
    rpm = pc["rpm_min"] + (pc["rpm_max"] - pc["rpm_min"]) * rpm_frac + pc["rpm_jitter"] * z[:, 5]
    pitch = np.maximum(0.0, pc["pitch_slope"] * (ws - pc["rated_ws"])) + pc["pitch_jitter"] * z[:, 6]

    cols = np.column_stack([ws, met, ti, ri, power, rpm, pitch])
    cols = np.clip(cols, lo, hi)
    return [ParamVector.from_array(row) for row in cols]


def generate_dataset(n: int, noise_sd: float = config.DEFAULT_NOISE_SD,
                     dropout_rate: float = config.DEFAULT_DROPOUT, seed: int = 0,
                     speedup_rate: float = 0.0) -> Dataset:
    """Sample ``n`` parameter vectors, simulate and impute one scan for each.

    Scan ``i`` draws from its own RNG stream keyed on ``(seed, i)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params = sample_params(n, [seed, 0])
    scans = []
    for i, p in enumerate(params):
        stream = np.random.default_rng([seed, 1, i])
        speedup = speedup_rate > 0 and stream.random() < speedup_rate
        raw = simulate_scan(p, noise_sd, dropout_rate, seed=stream.integers(2**63), speedup=speedup)
        scans.append(impute_missing(raw))
    cfg = {"n": n, "noise_sd": noise_sd, "dropout_rate": dropout_rate, "seed": seed,
           "speedup_rate": speedup_rate, "wake": dict(config.WAKE),
           "power_curve": dict(config.POWER_CURVE)}
    return Dataset(params, scans, seed, cfg)
