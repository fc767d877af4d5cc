"""Exact Gaussian process regression with a zero-mean prior.

Hyperparameters are the lengthscale and the noise variance; both are fitted
by maximizing the log marginal likelihood from several log-uniform starts.
A small jitter is added to the diagonal before the Cholesky factorization
and escalated by decades when the factorization fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import config, kernels
from .errors import CholeskyFailure, NonFiniteLikelihood

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)

# optimizer box for (lengthscale, noise variance)
LENGTHSCALE_BOUNDS = (1e-3, 1e2)
NOISE_BOUNDS = (1e-6, 10.0)
# multi-start sampling box
LENGTHSCALE_STARTS = (1e-2, 1e1)
NOISE_STARTS = (1e-6, 1.0)


def robust_cholesky(a, jitter=config.GP_JITTER, max_jitter=config.GP_JITTER_MAX):
    """Lower Cholesky factor of ``a + jitter * I``, escalating the jitter by
    factors of ten up to ``max_jitter``. Returns ``(L, jitter_used)``."""
    n = a.shape[0]
    j = jitter
    while True:
        try:
            return cholesky(a + j * np.eye(n), lower=True, check_finite=True), j
        except (LinAlgError, ValueError):
            if j >= max_jitter or j == 0 and max_jitter == 0:
                raise CholeskyFailure(f"Cholesky failed with jitter up to {j:g}") from None
            j = max(j * 10.0, 1e-10) if j else min(1e-10, max_jitter)


@dataclass
class GpModel:
    lengthscale: float
    noise: float  # sigma_eps^2
    X: np.ndarray
    y: np.ndarray  # targets in model units (standardized)
    y_mean: float = 0.0
    y_std: float = 1.0
    jitter: float = config.GP_JITTER
    chol: np.ndarray = None
    alpha: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.y)

    @property
    def effective_noise(self):
        """Diagonal term actually added to K (noise plus jitter)."""
        return self.noise + self.jitter

    def kernel(self, a, b):
        return kernels.gram(a, b, self.lengthscale)

    def predict(self, theta):
        """Posterior mean and variance in target units."""
        mean, var = gp_predict(self, theta)
        return self.y_mean + self.y_std * mean, self.y_std**2 * var


def assemble(X, y, lengthscale, noise, jitter=config.GP_JITTER, max_jitter=config.GP_JITTER_MAX,
             y_mean=0.0, y_std=1.0, meta=None) -> GpModel:
    """Factorize the training covariance for fixed hyperparameters."""
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    K = kernels.gram(X, X, lengthscale)
    K[np.diag_indices_from(K)] += noise
    L, used = robust_cholesky(K, jitter, max(max_jitter, jitter))
    alpha = cho_solve((L, True), y)
    return GpModel(float(lengthscale), float(noise), X, y, float(y_mean), float(y_std), used, L, alpha, meta or {})


def gp_loglik(m: GpModel) -> float:
    """log N(y | 0, K + (noise + jitter) I) from the stored factorization."""
    return float(-0.5 * m.y @ m.alpha - np.sum(np.log(np.diag(m.chol))) - 0.5 * m.n * LOG2PI)


def log_marginal_likelihood(X, y, log_lengthscale, log_noise, jitter=config.GP_JITTER, grad=True):
    """Log marginal likelihood and its gradient in (log lengthscale, log noise).

    The jitter is held fixed; it is not a hyperparameter.
    """
    ell = float(np.exp(log_lengthscale))
    noise = float(np.exp(log_noise))
    K = kernels.gram(X, X, ell)
    n = len(y)
    K[np.diag_indices(n)] += noise + jitter
    try:
        L = cholesky(K, lower=True)
    except LinAlgError:
        raise CholeskyFailure("covariance not positive definite") from None
    alpha = cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG2PI
    if not grad:
        return float(value)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dK_ell = kernels.gram_dlog_lengthscale(X, X, ell)
    g_ell = 0.5 * np.sum(W * dK_ell)
    g_noise = 0.5 * noise * np.trace(W)
    return float(value), np.array([g_ell, g_noise])


def _start_points(n_starts, seed, init=None):
    rng = np.random.default_rng(seed)
    lo = np.log([LENGTHSCALE_STARTS[0], NOISE_STARTS[0]])
    hi = np.log([LENGTHSCALE_STARTS[1], NOISE_STARTS[1]])
    starts = [] if init is None else [np.log(np.asarray(init, float))]
    starts += list(rng.uniform(lo, hi, size=(max(n_starts - len(starts), 0), 2)))
    return starts


def maximize_likelihood(objective, starts, bounds):
    """Run L-BFGS-B from each start on ``-objective``; returns (best_x, best_value)."""
    best_x, best_val = None, -np.inf

    def neg(x):
        try:
            val, g = objective(x)
        except CholeskyFailure:
            return 1e25, np.zeros_like(x)
        if not np.isfinite(val):
            return 1e25, np.zeros_like(x)
        return -val, -g

    for x0 in starts:
        x0 = np.clip(x0, bounds[:, 0], bounds[:, 1])
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        val = -res.fun
        if val > best_val and val > -1e24:
            best_x, best_val = res.x, val
    return best_x, best_val


def standardize_targets(y, standardize=True):
    y = np.asarray(y, float).ravel()
    if not standardize:
        return y, 0.0, 1.0
    mean = float(y.mean())
    std = float(y.std())
    if not std > 0:
        std = 1.0
    return (y - mean) / std, mean, std


def gp_fit(X, y, init=None, n_starts=8, seed=0, standardize=True, jitter=config.GP_JITTER,
           fixed=None, meta=None) -> GpModel:
    """Fit lengthscale and noise variance by multi-start maximum likelihood.

    ``init`` is an optional ``(lengthscale, noise)`` guess used as the first
    start. ``fixed`` skips optimization and uses the given pair. Targets are
    standardized to zero mean and unit variance unless ``standardize`` is
    false.
    """
    X = np.atleast_2d(np.asarray(X, float))
    ys, y_mean, y_std = standardize_targets(y, standardize)
    if len(ys) < 2 and fixed is None:
        raise ValueError("need at least two training points to fit hyperparameters")
    if fixed is not None:
        ell, noise = fixed
        return assemble(X, ys, ell, noise, jitter, y_mean=y_mean, y_std=y_std, meta=meta)

    bounds = np.log(np.array([LENGTHSCALE_BOUNDS, NOISE_BOUNDS]))

    def objective(x):
        return log_marginal_likelihood(X, ys, x[0], x[1], jitter)

    best, val = maximize_likelihood(objective, _start_points(n_starts, seed, init), bounds)
    if best is None or not np.isfinite(val):
        raise NonFiniteLikelihood("no start produced a finite likelihood")
    ell, noise = np.exp(best)
    log.debug("gp_fit: lengthscale=%.4g noise=%.4g loglik=%.6g", ell, noise, val)
    m = assemble(X, ys, ell, noise, jitter, y_mean=y_mean, y_std=y_std, meta=meta)
    m.meta.setdefault("loglik", float(val))
    return m


def cross_cov(m: GpModel, theta):
    """``(k(theta, X), v)`` with ``v = L^{-1} k(X, theta)``."""
    theta = np.atleast_2d(np.asarray(theta, float))
    k = m.kernel(m.X, theta)
    v = solve_triangular(m.chol, k, lower=True)
    return k, v


def gp_predict(m: GpModel, theta):
    """Posterior mean and variance in model (standardized) units.

    Scalar outputs for a single point, arrays for a batch of rows.
    """
    theta = np.asarray(theta, float)
    d = m.X.shape[1]
    single = theta.ndim == 0 or (theta.ndim == 1 and theta.size == d)
    k, v = cross_cov(m, theta.reshape(-1, d))
    mean = k.T @ m.alpha
    var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def posterior_cov(m: GpModel, a, b):
    """Posterior covariance matrix between point sets ``a`` and ``b``."""
    _, va = cross_cov(m, a)
    _, vb = cross_cov(m, b)
    return m.kernel(a, b) - va.T @ vb


def posterior_var(m: GpModel, a):
    _, va = cross_cov(m, a)
    return np.maximum(1.0 - np.sum(va * va, axis=0), 0.0)
