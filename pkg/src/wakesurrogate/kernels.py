"""Matérn covariance with smoothness 3/2 and unit signal variance."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma, kv

SQRT3 = np.sqrt(3.0)


def distances(a, b):
    return cdist(np.atleast_2d(a), np.atleast_2d(b))


def matern32_r(r, lengthscale):
    """Covariance as a function of Euclidean distance ``r``."""
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    a = SQRT3 * np.asarray(r, dtype=float) / lengthscale
    return (1.0 + a) * np.exp(-a)


def matern32(theta, theta_prime, lengthscale):
    """k(theta, theta') for two points."""
    r = float(np.linalg.norm(np.asarray(theta, float) - np.asarray(theta_prime, float)))
    return float(matern32_r(r, lengthscale))


def gram(a, b, lengthscale):
    return matern32_r(distances(a, b), lengthscale)


def gram_dlog_lengthscale(a, b, lengthscale):
    """Elementwise derivative of :func:`gram` with respect to log(lengthscale)."""
    s = SQRT3 * distances(a, b) / lengthscale
    return s * s * np.exp(-s)


def gram_dfirst(a, b, lengthscale):
    """``D[i, j, :] = d k(a_i, b_j) / d a_i`` as an ``(n_a, n_b, dim)`` array."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    diff = a[:, None, :] - b[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    coef = -(3.0 / lengthscale**2) * np.exp(-SQRT3 * r / lengthscale)
    return coef[..., None] * diff


def matern_general(r, lengthscale, nu):
    """The general Bessel-function form of the Matérn family (used as a check)."""
    r = np.asarray(r, dtype=float)
    s = np.sqrt(2.0 * nu) * r / lengthscale
    with np.errstate(invalid="ignore"):
        out = (2.0 ** (1.0 - nu) / gamma(nu)) * s**nu * kv(nu, s)
    return np.where(s == 0, 1.0, out)
