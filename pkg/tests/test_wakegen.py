import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wakesurrogate import config
from wakesurrogate.errors import GeometryDegenerate, RowAllMissing
from wakesurrogate.wakegen import (
    LidarGeometry,
    ParamVector,
    ScanGrid,
    equivalent_velocity,
    expansion_rate,
    generate_dataset,
    ground_truth_wake,
    impute_missing,
    sample_params,
    simulate_scan,
    thrust_proxy,
    wake_field,
    wake_width,
)


def _params(**kw):
    base = dict(scada_ws=8.0, met_ws_80m=8.2, scada_ti=0.1, met_bulk_richardson=0.0,
                scada_power=900.0, scada_rpm=12.0, scada_pitch=0.5)
    base.update(kw)
    return ParamVector(**base)


unit = st.floats(0.0, 1.0)
param_vectors = st.tuples(*[unit] * config.N_PARAMS).map(
    lambda u: ParamVector.from_array(config.PARAM_LOW + np.array(u) * (config.PARAM_HIGH - config.PARAM_LOW))
)


def test_far_field_recovers_freestream():
    p = _params()
    assert ground_truth_wake(p, 5.0, 1e6) == pytest.approx(1.0, abs=1e-15)


def test_min_thrust_clamp_centreline_value():
    # Ct clamps to 0.05: sigma = 0.25 at x = 0, so u = sqrt(1 - 0.05 / 0.5)
    p = _params(scada_ws=15.22, scada_power=58.8)
    assert thrust_proxy(p) == 0.05
    assert ground_truth_wake(p, 0.0, 0.0) == pytest.approx(0.94868329805051379960, rel=1e-14)


def test_higher_ti_widens_wake():
    lo, hi = _params(scada_ti=0.05), _params(scada_ti=0.3)
    x = np.linspace(0.01, 6, 50)
    assert np.all(wake_width(hi, x) > wake_width(lo, x))
    assert expansion_rate(hi) > expansion_rate(lo)


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        ground_truth_wake(_params(), -0.1, 0.0)


@given(param_vectors)
def test_field_in_physical_range(p):
    u = wake_field(p)
    assert u.shape == (61, 41)
    assert np.all(np.isfinite(u)) and np.all(u > 0) and np.all(u <= 2)


@given(param_vectors)
def test_centreline_recovery_beyond_one_diameter(p):
    x, _ = config.grid_coords()
    scan = simulate_scan(p, noise_sd=0.0, dropout_rate=0.0)
    centre = scan.values.min(axis=1)[x >= 1.0]
    assert np.all(np.diff(centre) >= -1e-12)


@pytest.mark.parametrize("u_los,az,expected", [(5.0, 0.0, 5.0), (5.0, 60.0, 10.0)])
def test_equivalent_velocity(u_los, az, expected):
    g = LidarGeometry(azimuth=az, elevation=0.0, wind_direction=0.0)
    assert equivalent_velocity(u_los, g) == pytest.approx(expected, rel=1e-12)


def test_equivalent_velocity_degenerate():
    with pytest.raises(GeometryDegenerate):
        equivalent_velocity(5.0, LidarGeometry(89.99, 0.0, 0.0))


@given(st.floats(0.1, 30), st.floats(-80, 80), st.floats(-80, 80), st.floats(0, 360))
def test_equivalent_velocity_inverts_projection(u, rel_az, el, wd):
    g = LidarGeometry(azimuth=wd + rel_az, elevation=el, wind_direction=wd)
    proj = math.cos(math.radians(g.azimuth - g.wind_direction)) * math.cos(math.radians(el))
    assert equivalent_velocity(u * proj, g) == pytest.approx(u, rel=1e-12)


def test_clean_scan_equals_analytic_field():
    p = _params()
    s = simulate_scan(p, noise_sd=0.0, dropout_rate=0.0, seed=3)
    assert np.array_equal(s.values, wake_field(p))
    assert s.mask.all()


def test_dropout_fraction_in_range():
    s = simulate_scan(_params(), noise_sd=0.03, dropout_rate=0.1, seed=7)
    frac = 1.0 - s.mask.mean()
    assert 0.08 <= frac <= 0.20


def test_scan_is_deterministic():
    a = simulate_scan(_params(), 0.03, 0.1, seed=11)
    b = simulate_scan(_params(), 0.03, 0.1, seed=11)
    assert a == b


def test_bad_arguments():
    with pytest.raises(ValueError):
        simulate_scan(_params(), noise_sd=-1)
    with pytest.raises(ValueError):
        simulate_scan(_params(), dropout_rate=0.5)


def _grid(values, mask):
    return ScanGrid(values, mask)


def test_impute_constant_field():
    v = np.full((61, 41), 0.7)
    m = np.ones_like(v, bool)
    m[30, 20] = False
    v[30, 20] = np.nan
    out = impute_missing(_grid(v, m))
    assert out.values[30, 20] == pytest.approx(0.7, abs=1e-15)
    assert out.mask.all()


def test_impute_linear_field_is_exact():
    _, r = config.grid_coords()
    v = np.tile(0.8 + 0.05 * r, (61, 1))
    m = np.ones_like(v, bool)
    m[20, 15] = False
    truth = v[20, 15]
    v = v.copy()
    v[20, 15] = -1.0
    assert impute_missing(_grid(v, m)).values[20, 15] == pytest.approx(truth, abs=1e-9)


def test_impute_row_missing():
    v = np.ones((61, 41))
    m = np.ones_like(v, bool)
    m[5] = False
    with pytest.raises(RowAllMissing):
        impute_missing(_grid(v, m))


@given(st.integers(0, 2**32 - 1))
def test_impute_identity_on_full_scan(seed):
    s = simulate_scan(_params(), 0.03, 0.0, seed=seed)
    assert impute_missing(s) == s


@given(st.integers(0, 2**32 - 1))
def test_impute_keeps_valid_cells(seed):
    s = simulate_scan(_params(), 0.03, 0.2, seed=seed)
    out = impute_missing(s)
    assert np.array_equal(out.values[s.mask], s.values[s.mask])
    assert out.mask.all() and np.all(np.isfinite(out.values))


def test_sampled_params_inside_table_bounds():
    ps = sample_params(10, seed=4)
    assert len(ps) == 10 and all(p.in_bounds() for p in ps)


def test_power_coupled_to_wind_speed():
    theta = np.vstack([p.as_array() for p in sample_params(400, seed=1)])
    assert np.corrcoef(theta[:, 0], theta[:, 4])[0, 1] > 0.8
    assert np.corrcoef(theta[:, 0], theta[:, 1])[0, 1] > 0.9


def test_dataset_deterministic_and_sized():
    a = generate_dataset(4, seed=9)
    b = generate_dataset(4, seed=9)
    assert len(a) == 4
    assert a.params == b.params and all(x == y for x, y in zip(a.scans, b.scans))
    assert all(s.mask.all() for s in a.scans)


def test_single_clean_scan_dataset():
    ds = generate_dataset(1, noise_sd=0.0, dropout_rate=0.0, seed=2)
    assert np.array_equal(ds.scans[0].values, wake_field(ds.params[0]))


def test_param_vector_roundtrip_and_validation():
    p = _params()
    assert ParamVector.from_array(p.as_array()) == p
    with pytest.raises(ValueError):
        _params(scada_ti=0.9).validate()
