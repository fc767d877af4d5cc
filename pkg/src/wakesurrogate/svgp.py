"""Sparse variational GP regression with the collapsed evidence lower bound.

With inducing inputs Z (m points), Q = K_nm K_mm^{-1} K_mn and the bound

    F = log N(y | 0, Q + s2 I) - tr(K_nn - Q) / (2 s2)

is evaluated in O(n m^2) through A = L_m^{-1} K_mn / s and
B = I + A A^T, never forming an n x n matrix. Gradients with respect to
log-lengthscale, log-noise and Z are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import config, kernels
from .errors import CholeskyFailure, NonFiniteLikelihood
from .gp import (
    LENGTHSCALE_BOUNDS,
    LOG2PI,
    NOISE_BOUNDS,
    _start_points,
    robust_cholesky,
    standardize_targets,
)


@dataclass
class _Factors:
    Lm: np.ndarray
    LB: np.ndarray
    A: np.ndarray
    c: np.ndarray
    jitter: float


def _factorize(lengthscale, noise, Z, X, y, jitter):
    Kmm = kernels.gram(Z, Z, lengthscale)
    Lm, used = robust_cholesky(Kmm, jitter, config.GP_JITTER_MAX)
    Kmn = kernels.gram(Z, X, lengthscale)
    s = np.sqrt(noise)
    A = solve_triangular(Lm, Kmn, lower=True) / s
    B = A @ A.T
    B[np.diag_indices_from(B)] += 1.0
    LB, _ = robust_cholesky(B, 0.0, 0.0)
    c = solve_triangular(LB, A @ y, lower=True) / s
    return _Factors(Lm, LB, A, c, used), Kmn


def _bound(noise, y, f: _Factors):
    n = len(y)
    quad = -0.5 * (y @ y / noise - f.c @ f.c)
    logdet = -np.sum(np.log(np.diag(f.LB))) - 0.5 * n * np.log(noise)
    trace = -0.5 * n / noise + 0.5 * np.sum(f.A * f.A)  # unit-variance kernel: tr K_nn = n
    return -0.5 * n * LOG2PI + logdet + quad + trace


def svgp_elbo(lengthscale, noise, Z, X, y, jitter=config.SVGP_JITTER):
    """Collapsed lower bound on the log marginal likelihood."""
    Z = np.atleast_2d(np.asarray(Z, float))
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    f, _ = _factorize(lengthscale, noise, Z, X, y, jitter)
    return float(_bound(noise, y, f))


def svgp_elbo_and_grad(log_lengthscale, log_noise, Z, X, y, jitter=config.SVGP_JITTER):
    """Bound plus gradients ``(d/dlog ell, d/dlog s2, d/dZ)``."""
    ell = float(np.exp(log_lengthscale))
    noise = float(np.exp(log_noise))
    Z = np.atleast_2d(np.asarray(Z, float))
    n, m = len(y), len(Z)
    f, Kmn = _factorize(ell, noise, Z, X, y, jitter)
    value = _bound(noise, y, f)
    s = np.sqrt(noise)
    A, LB, Lm = f.A, f.LB, f.Lm

    # Sigma_y^{-1} = (I - A^T B^{-1} A) / s2, Sigma_y = Q + s2 I
    BinvA = cho_solve((LB, True), A)  # m x n
    beta = (y - A.T @ (BinvA @ y)) / noise
    P = s * solve_triangular(Lm.T, A, lower=False)  # K_mm^{-1} K_mn, m x n
    PT = P.T
    SinvPT = (PT - A.T @ (BinvA @ PT)) / noise  # n x m
    # W = dF/dQ = (beta beta^T - Sigma_y^{-1}) / 2 + I / (2 s2)
    WPT = 0.5 * np.outer(beta, beta @ PT) - 0.5 * SinvPT + PT / (2.0 * noise)
    dKmn = 2.0 * WPT.T
    dKmm = -P @ WPT

    dKmn_dl = kernels.gram_dlog_lengthscale(Z, X, ell)
    dKmm_dl = kernels.gram_dlog_lengthscale(Z, Z, ell)
    g_ell = np.sum(dKmn * dKmn_dl) + np.sum(dKmm * dKmm_dl)

    tr_q = noise * np.sum(A * A)
    tr_sinv = (n - np.sum(BinvA * A)) / noise
    tr_g = 0.5 * (beta @ beta - tr_sinv)
    g_noise = noise * (tr_g + (n - tr_q) / (2.0 * noise**2))

    gZ = _dz(dKmn, Z, X, ell) + _dz(dKmm + dKmm.T, Z, Z, ell)
    return float(value), g_ell, g_noise, gZ


def _dz(G, Z, X, ell):
    """sum_j G[i, j] * d k(z_i, x_j) / d z_i."""
    r = kernels.distances(Z, X)
    coef = G * (-(3.0 / ell**2) * np.exp(-kernels.SQRT3 * r / ell))
    return Z * coef.sum(axis=1)[:, None] - coef @ X


@dataclass
class SvgpModel:
    lengthscale: float
    noise: float
    Z: np.ndarray
    X: np.ndarray
    y: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    jitter: float = config.SVGP_JITTER
    factors: _Factors = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return len(self.Z)

    def elbo(self):
        return float(_bound(self.noise, self.y, self.factors))

    def predict(self, theta):
        mean, var = svgp_predict(self, theta)
        return self.y_mean + self.y_std * mean, self.y_std**2 * var


def build(lengthscale, noise, Z, X, y, jitter=config.SVGP_JITTER, y_mean=0.0, y_std=1.0, meta=None):
    Z = np.atleast_2d(np.asarray(Z, float))
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    f, _ = _factorize(lengthscale, noise, Z, X, y, jitter)
    return SvgpModel(float(lengthscale), float(noise), Z, X, y, y_mean, y_std, f.jitter, f, meta or {})


def svgp_predict(model: SvgpModel, theta):
    """Posterior mean and variance (model units) under the optimal q(u)."""
    theta = np.asarray(theta, float)
    d = model.X.shape[1]
    single = theta.ndim == 0 or (theta.ndim == 1 and theta.size == d)
    f = model.factors
    k = kernels.gram(model.Z, theta.reshape(-1, d), model.lengthscale)
    w = solve_triangular(f.Lm, k, lower=True)
    u = solve_triangular(f.LB, w, lower=True)
    mean = u.T @ f.c
    var = np.maximum(1.0 - np.sum(w * w, axis=0) + np.sum(u * u, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def svgp_fit(X, y, m=64, init=None, n_starts=3, seed=0, optimize_inducing=True, Z_init=None,
             standardize=True, jitter=config.SVGP_JITTER, maxiter=500, meta=None) -> SvgpModel:
    """Maximize the bound over (log lengthscale, log noise, Z).

    Inducing inputs start as a random subset of the training inputs (a new
    subset per start) unless ``Z_init`` is given, and are kept inside the
    bounding box of the training inputs.
    """
    X = np.atleast_2d(np.asarray(X, float))
    ys, y_mean, y_std = standardize_targets(y, standardize)
    n, d = X.shape
    if Z_init is not None:
        m = len(Z_init)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    hyper_starts = _start_points(n_starts, rng.integers(2**63), init)
    lo, hi = X.min(axis=0), X.max(axis=0)
    hyp_bounds = np.log(np.array([LENGTHSCALE_BOUNDS, NOISE_BOUNDS]))

    best = None
    for h0 in hyper_starts:
        if Z_init is not None:
            Z0 = np.array(Z_init, dtype=float)
        else:
            Z0 = X[np.sort(rng.choice(n, size=m, replace=False))]
        if optimize_inducing:
            x0 = np.concatenate([h0, Z0.ravel()])
            bounds = np.vstack([hyp_bounds, np.tile(np.column_stack([lo, hi]), (m, 1))])
        else:
            x0 = np.asarray(h0, float)
            bounds = hyp_bounds

        def neg(x, Z0=Z0):
            Z = x[2:].reshape(m, d) if optimize_inducing else Z0
            try:
                val, gl, gn, gZ = svgp_elbo_and_grad(x[0], x[1], Z, X, ys, jitter)
            except CholeskyFailure:
                return 1e25, np.zeros_like(x)
            if not np.isfinite(val):
                return 1e25, np.zeros_like(x)
            g = np.concatenate([[gl, gn], gZ.ravel()]) if optimize_inducing else np.array([gl, gn])
            return -val, -g

        x0 = np.clip(x0, bounds[:, 0], bounds[:, 1])
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if res.fun < 1e24 and (best is None or res.fun < best[0]):
            Z = res.x[2:].reshape(m, d) if optimize_inducing else Z0
            best = (res.fun, res.x[:2].copy(), Z.copy())
    if best is None:
        raise NonFiniteLikelihood("no start produced a finite bound")
    _, hyp, Z = best
    ell, noise = np.exp(hyp)
    model = build(ell, noise, Z, X, ys, jitter, y_mean, y_std, meta)
    model.meta.setdefault("elbo", model.elbo())
    return model
