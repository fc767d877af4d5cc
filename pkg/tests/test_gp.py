import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wakesurrogate import gp, kernels
from wakesurrogate.errors import CholeskyFailure

from gradcheck import fd_gradient

# mpmath, 30 digits: (1 + sqrt3) exp(-sqrt3)
MATERN_R1 = 0.483357724596507650595
# log N([1, -1] | 0, K + 0.1 I) at lengthscale 1, inputs {0, 1}
LOGLIK_2X2 = -3.44760359647039371034


def test_matern_oracle():
    assert kernels.matern32([0.0], [1.0], 1.0) == pytest.approx(MATERN_R1, rel=1e-15)
    assert kernels.matern32([0.3, 0.4], [0.3, 0.4], 2.0) == 1.0


@pytest.mark.parametrize("r", [0.0, 1e-3, 0.4, 1.0, 3.7, 20.0])
@pytest.mark.parametrize("ell", [0.1, 1.0, 5.0])
def test_matern_matches_bessel_form(r, ell):
    assert kernels.matern32_r(r, ell) == pytest.approx(float(kernels.matern_general(r, ell, 1.5)), rel=1e-10, abs=1e-300)


@settings(max_examples=30)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.05, 10))
def test_matern_decreasing_in_distance(r1, r2, ell):
    a, b = sorted((r1, r2))
    assert kernels.matern32_r(a, ell) >= kernels.matern32_r(b, ell)


def test_nonpositive_lengthscale():
    with pytest.raises(ValueError):
        kernels.matern32_r(1.0, 0.0)


def test_loglik_2x2_oracle():
    X, y = np.array([[0.0], [1.0]]), np.array([1.0, -1.0])
    val = gp.log_marginal_likelihood(X, y, 0.0, np.log(0.1), jitter=0.0, grad=False)
    assert val == pytest.approx(LOGLIK_2X2, rel=1e-12)
    m = gp.assemble(X, y, 1.0, 0.1, jitter=0.0)
    assert gp.gp_loglik(m) == pytest.approx(LOGLIK_2X2, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_loglik_gradient(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.random((12, 3)), rng.normal(size=12)
    x0 = np.array([np.log(rng.uniform(0.1, 2)), np.log(rng.uniform(0.01, 1))])
    _, g = gp.log_marginal_likelihood(X, y, *x0)
    fd = fd_gradient(lambda v: gp.log_marginal_likelihood(X, y, v[0], v[1], grad=False), x0)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_prediction_matches_naive_inverse():
    rng = np.random.default_rng(1)
    X, y, T = rng.random((15, 2)), rng.normal(size=15), rng.random((6, 2))
    m = gp.assemble(X, y, 0.7, 0.05, jitter=0.0)
    K = kernels.gram(X, X, 0.7) + 0.05 * np.eye(15)
    k = kernels.gram(X, T, 0.7)
    Kinv = np.linalg.inv(K)
    mean, var = gp.gp_predict(m, T)
    np.testing.assert_allclose(mean, k.T @ Kinv @ y, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(var, 1.0 - np.sum(k * (Kinv @ k), axis=0), rtol=1e-8, atol=1e-12)


def test_single_point_oracle():
    # n = 1: mean = k y / (1 + s2), var = 1 - k^2 / (1 + s2)
    m = gp.assemble([[0.0]], [2.0], 1.0, 0.5, jitter=0.0)
    mean, var = gp.gp_predict(m, [1.0])
    assert mean == pytest.approx(MATERN_R1 * 2.0 / 1.5, rel=1e-14)
    assert var == pytest.approx(1.0 - MATERN_R1**2 / 1.5, rel=1e-14)


def test_reverts_to_prior_far_away():
    m = gp.assemble(np.random.default_rng(0).random((10, 2)), np.ones(10), 0.2, 0.01)
    mean, var = gp.gp_predict(m, [1e3, 1e3])
    assert abs(mean) < 1e-12 and var == pytest.approx(1.0)


def test_near_interpolation_at_small_noise():
    rng = np.random.default_rng(2)
    X, y = rng.random((10, 2)), rng.normal(size=10)
    mean, var = gp.gp_predict(gp.assemble(X, y, 0.5, 1e-8, jitter=0.0), X)
    np.testing.assert_allclose(mean, y, atol=1e-5)
    assert np.all(var < 1e-6)


def test_variance_shrinks_with_more_data():
    rng = np.random.default_rng(3)
    X, T = rng.random((20, 2)), rng.random((30, 2))
    v_small = gp.posterior_var(gp.assemble(X[:10], np.zeros(10), 0.4, 0.01), T)
    v_big = gp.posterior_var(gp.assemble(X, np.zeros(20), 0.4, 0.01), T)
    assert np.all(v_big <= v_small + 1e-12)


@settings(max_examples=25)
@given(st.permutations(list(range(8))))
def test_prediction_invariant_to_training_order(perm):
    rng = np.random.default_rng(4)
    X, y, T = rng.random((8, 2)), rng.normal(size=8), rng.random((5, 2))
    a = gp.gp_predict(gp.assemble(X, y, 0.5, 0.1), T)
    b = gp.gp_predict(gp.assemble(X[perm], y[perm], 0.5, 0.1), T)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)


def test_gram_is_psd_and_cholesky_reconstructs():
    rng = np.random.default_rng(5)
    X = rng.random((40, 7))
    K = kernels.gram(X, X, 0.8)
    assert np.linalg.eigvalsh(K).min() > -1e-10
    m = gp.assemble(X, np.zeros(40), 0.8, 0.0)
    np.testing.assert_allclose(m.chol @ m.chol.T, K + m.jitter * np.eye(40), atol=1e-12)


def test_jitter_escalates_on_duplicates():
    # smallest eigenvalue -5e-6: 1e-6 fails, 1e-5 succeeds
    a = np.ones((5, 5)) - 5e-6 * np.eye(5)
    L, used = gp.robust_cholesky(a)
    assert used == pytest.approx(1e-5) and np.all(np.isfinite(L))
    with pytest.raises(CholeskyFailure):
        gp.robust_cholesky(-np.eye(3))


def test_fit_recovers_known_hyperparameters():
    rng = np.random.default_rng(6)
    X = rng.random((150, 2))
    K = kernels.gram(X, X, 0.3) + 0.01 * np.eye(150)
    y = np.linalg.cholesky(K) @ rng.normal(size=150)
    m = gp.gp_fit(X, y, n_starts=4, seed=0, standardize=False)
    assert 0.15 < m.lengthscale < 0.6
    assert 0.002 < m.noise < 0.05


def test_fit_standardizes_targets():
    rng = np.random.default_rng(7)
    X = rng.random((30, 2))
    y = 5.0 + 3.0 * np.sin(4 * X[:, 0])
    m = gp.gp_fit(X, y, n_starts=2, seed=0)
    assert m.y.mean() == pytest.approx(0.0, abs=1e-12) and m.y.std() == pytest.approx(1.0)
    assert m.predict(X[:3])[0] == pytest.approx(y[:3], abs=0.05)


def test_fit_is_deterministic():
    rng = np.random.default_rng(8)
    X, y = rng.random((25, 3)), rng.normal(size=25)
    a, b = gp.gp_fit(X, y, seed=3, n_starts=3), gp.gp_fit(X, y, seed=3, n_starts=3)
    assert (a.lengthscale, a.noise) == (b.lengthscale, b.noise)


def test_fixed_hyperparameters_skip_optimization():
    rng = np.random.default_rng(9)
    m = gp.gp_fit(rng.random((5, 2)), rng.normal(size=5), fixed=(0.4, 0.02))
    assert (m.lengthscale, m.noise) == (0.4, 0.02)


def test_fit_needs_two_points():
    with pytest.raises(ValueError):
        gp.gp_fit([[0.5, 0.5]], [1.0])
