"""Fixed constants: parameter box, scan grid, wake-model coefficients."""

import numpy as np

# name -> (low, high); order is the canonical column order everywhere.
PARAM_BOUNDS = {
    "scada_ws": (2.92, 15.22),
    "met_ws_80m": (3.9, 15.22),
    "scada_ti": (0.04, 0.36),
    "met_bulk_richardson": (-0.01, 0.01),
    "scada_power": (58.8, 2423.0),
    "scada_rpm": (7.07, 16.95),
    "scada_pitch": (-2.0, 80.0),
}
PARAM_NAMES = tuple(PARAM_BOUNDS)
N_PARAMS = len(PARAM_NAMES)
PARAM_LOW = np.array([b[0] for b in PARAM_BOUNDS.values()])
PARAM_HIGH = np.array([b[1] for b in PARAM_BOUNDS.values()])

# Scan grid, in rotor diameters. 61 * 41 = 2501 cells.
GRID_ROWS = 61
GRID_COLS = 41
X_RANGE = (0.0, 6.0)
R_RANGE = (-2.0, 2.0)
GRID_SIZE = GRID_ROWS * GRID_COLS

# Zero-padded grid fed to the autoencoder (divisible by 4).
PADDED_SHAPE = (64, 44)


def grid_coords():
    x = np.linspace(*X_RANGE, GRID_ROWS)
    r = np.linspace(*R_RANGE, GRID_COLS)
    return x, r


# Gaussian-deficit wake model.
WAKE = {
    "rho_ref": 1.225,  # kg/m^3
    "rotor_diameter": 100.0,  # m; A_ref = pi * D^2 / 4
    "efficiency": 0.45,  # eta in the thrust proxy
    "ct_scale": 0.8,
    "ct_min": 0.05,
    "ct_max": 0.95,
    "k_ti": 0.35,  # k* = k_ti * TI * (1 + k_ri * Ri)
    "k_ri": 5.0,
    "sigma0": 0.25,  # initial wake width / d
    "u_floor": 1e-3,  # lower clamp keeps u/u_inf in (0, 2]
    "u_ceiling": 2.0,
}

# Power-curve proxy coupling SCADA channels to wind speed.
POWER_CURVE = {
    "cut_in": 3.0,
    "rated_ws": 12.0,
    "rated_power": 2400.0,  # kW
    "power_jitter": 0.05,  # relative sd
    "rpm_min": 7.07,
    "rpm_max": 16.95,
    "rpm_rated_ws": 10.0,
    "rpm_jitter": 0.3,  # rpm sd
    "pitch_slope": 4.0,  # deg per m/s above rated
    "pitch_jitter": 0.8,  # deg sd
    "met_ws_jitter": 0.05,  # relative sd between met tower and SCADA
}

# Dataset defaults. The 5000/1781 split does not reconcile with the
# 6654-scan corpus count; both are kept as configurable defaults.
DEFAULT_NOISE_SD = 0.03
DEFAULT_DROPOUT = 0.1
DEFAULT_N_TRAIN = 5000
DEFAULT_N_TEST = 1781

# Numerical defaults.
GP_JITTER = 1e-6
GP_JITTER_MAX = 1e-4
SVGP_JITTER = 1e-8
