"""Pool-based active learning for the exact GP by integrated-variance reduction.

At fixed hyperparameters the GP posterior variance does not depend on the
observed targets, so the expected reduction in average posterior variance
from adding a candidate is available in closed form:

    dV(c) = mean_{t in R} cov_n(t, c)^2 / (var_n(c) + s2)

where R is a reference set approximating the input domain and s2 the noise
(plus jitter) on the diagonal. Batches are built greedily with rank-1
updates of the posterior covariances between picks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import config
from . import gp as gpx
from .errors import PoolExhausted
from .mlp import scale_inputs
from .wakegen import sample_params

log = logging.getLogger(__name__)

# log RMSE reported when the mean squared error underflows
MSE_FLOOR = 1e-300
LOG_RMSE_FLOOR = 0.5 * np.log(MSE_FLOOR)

REFERENCE_SIZE = 512
REFERENCE_SEED = 20210


def reference_set(n=REFERENCE_SIZE, d=7, seed=REFERENCE_SEED, kind="coupled"):
    """Quadrature points for the integral over the scaled input domain.

    ``"box"``: Latin-hypercube points filling the unit box.
    ``"coupled"``: Latin-hypercube operating points passed through the same
    power-curve coupling as the corpus, so the integral covers feasible
    operating conditions only (high power at low wind does not occur).
    """
    if kind == "box":
        return qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(n)
    if kind == "coupled":
        if d != config.N_PARAMS:
            raise ValueError(f"coupled reference set needs d={config.N_PARAMS}")
        theta = np.vstack([p.as_array() for p in sample_params(n, [seed, 2])])
        return scale_inputs(theta)
    raise ValueError(f"unknown reference kind {kind!r}")


def integrated_variance(model: gpx.GpModel, R) -> float:
    """Average posterior variance over the reference set (model units)."""
    return float(np.mean(gpx.posterior_var(model, R)))


def expected_ivar_reduction(model: gpx.GpModel, candidate, R) -> float:
    """Exact decrease in average posterior variance over ``R`` from adding
    ``candidate`` as a training input (any target value)."""
    candidate = np.atleast_2d(np.asarray(candidate, float))
    R = np.atleast_2d(np.asarray(R, float))
    c = gpx.posterior_cov(model, R, candidate)[:, 0]
    var = gpx.posterior_var(model, candidate)[0]
    return float(np.mean(c * c) / (var + model.effective_noise))


def _scores(C_RP, var_P, noise):
    return np.mean(C_RP * C_RP, axis=0) / (var_P + noise)


def select_batch(model: gpx.GpModel, pool, R, q, exclude=()):
    """Greedy batch of ``q`` row indices into ``pool``.

    Each pick is the argmax of the expected reduction (lowest index on ties);
    the posterior covariances are then downdated as if the pick had been
    observed, and the remaining candidates rescored. Indices listed in
    ``exclude`` are never picked.
    """
    pool = np.atleast_2d(np.asarray(pool, float))
    R = np.atleast_2d(np.asarray(R, float))
    available = np.ones(len(pool), dtype=bool)
    available[np.asarray(list(exclude), dtype=int)] = False
    if q < 1:
        raise ValueError("q must be >= 1")
    if available.sum() < q:
        raise PoolExhausted(f"{available.sum()} candidates left, batch needs {q}")

    noise = model.effective_noise
    _, vR = gpx.cross_cov(model, R)
    _, vP = gpx.cross_cov(model, pool)
    C_RP = model.kernel(R, pool) - vR.T @ vP
    var_P = np.maximum(1.0 - np.sum(vP * vP, axis=0), 0.0)
    updates = []  # scaled pool columns of earlier picks
    chosen = []
    for _ in range(q):
        s = _scores(C_RP, var_P, noise)
        s[~available] = -np.inf
        j = int(np.argmax(s))  # first maximum wins
        chosen.append(j)
        available[j] = False
        if len(chosen) == q:
            break
        c_P = model.kernel(pool, pool[j : j + 1])[:, 0] - vP.T @ vP[:, j]
        for u in updates:
            c_P -= u * u[j]
        denom = np.sqrt(var_P[j] + noise)
        u = c_P / denom
        C_RP -= np.outer(C_RP[:, j] / denom, u)
        var_P = np.maximum(var_P - u * u, 0.0)
        updates.append(u)
    return chosen


def log_rmse(model, X_test, y_test) -> float:
    """log sqrt(mean squared error) of the posterior mean, in target units.

    A mean square below ``MSE_FLOOR`` is clamped, so an exact fit reports
    ``LOG_RMSE_FLOOR``.
    """
    y_test = np.asarray(y_test, float).ravel()
    if y_test.size == 0:
        raise ValueError("test set is empty")
    mean, _ = model.predict(np.atleast_2d(X_test))
    mse = float(np.mean((np.asarray(mean).ravel() - y_test) ** 2))
    if mse < MSE_FLOOR:
        log.info("log_rmse: exact fit, clamped to %.4g", LOG_RMSE_FLOOR)
        return float(LOG_RMSE_FLOOR)
    return float(0.5 * np.log(mse))


@dataclass
class AlConfig:
    n0: int = 50
    steps: int = 100
    q: int = 1
    repetitions: int = 20
    seed: int = 0
    n_starts: int = 4  # multi-starts for the initial fit
    refit_starts: int = 2  # warm start + random starts at each step
    freeze_hyperparameters: bool = False
    reference_size: int = REFERENCE_SIZE
    reference: str = "coupled"  # or "box"

    def validate(self, pool_size):
        if self.n0 < 2:
            raise ValueError("n0 must be >= 2")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.steps < 0 or self.repetitions < 1:
            raise ValueError("steps must be >= 0 and repetitions >= 1")
        if self.n0 + self.steps * self.q > pool_size:
            raise ValueError(f"n0 + steps * q = {self.n0 + self.steps * self.q} exceeds pool size {pool_size}")
        return self


@dataclass
class AlStep:
    step: int
    selected: list
    ivar_before: float
    ivar_after: float
    log_rmse: float
    lengthscale: float
    noise: float


@dataclass
class AlTrace:
    repetition: int
    seed: list
    initial: list
    steps: list = field(default_factory=list)

    @property
    def final_log_rmse(self):
        return self.steps[-1].log_rmse

    @property
    def selected(self):
        return [i for s in self.steps[1:] for i in s.selected]

    def log_rmse_curve(self):
        return np.array([s.log_rmse for s in self.steps])

    def rows(self):
        """Flat records for the trace CSV, one per selected index."""
        out = []
        for s in self.steps:
            ivar = s.ivar_before if s.step == 0 else s.ivar_after
            for i in s.selected or [-1]:
                out.append({"repetition": self.repetition, "step": s.step, "selected_index": int(i),
                            "integrated_variance": ivar, "log_rmse": s.log_rmse})
        return out


def _fit(X, y, cfg, rng, init=None, fixed=None):
    starts = cfg.n_starts if init is None else cfg.refit_starts
    return gpx.gp_fit(X, y, init=init, n_starts=starts, seed=int(rng.integers(2**63)), fixed=fixed)


def al_run(X_pool, y_pool, X_test, y_test, cfg: AlConfig, R=None):
    """Run ``cfg.repetitions`` independent active-learning traces.

    ``X_pool`` and ``X_test`` are unit-box scaled inputs; ``y`` values are one
    latent dimension. Step 0 records the fit on the ``n0`` random seed
    points; each later step adds a greedy batch of ``q`` points and refits
    the hyperparameters (warm-started) unless they are frozen.
    """
    X_pool = np.atleast_2d(np.asarray(X_pool, float))
    y_pool = np.asarray(y_pool, float).ravel()
    cfg.validate(len(X_pool))
    R = reference_set(cfg.reference_size, X_pool.shape[1], kind=cfg.reference) if R is None else np.atleast_2d(R)
    return [_one_trace(X_pool, y_pool, X_test, y_test, cfg, R, rep) for rep in range(cfg.repetitions)]


def _one_trace(X_pool, y_pool, X_test, y_test, cfg, R, rep):
    rng = np.random.default_rng([cfg.seed, rep])
    idx = [int(i) for i in np.sort(rng.choice(len(X_pool), size=cfg.n0, replace=False))]
    model = _fit(X_pool[idx], y_pool[idx], cfg, rng)
    ivar = integrated_variance(model, R)
    trace = AlTrace(rep, [cfg.seed, rep], list(idx))
    trace.steps.append(AlStep(0, [], ivar, ivar, log_rmse(model, X_test, y_test), model.lengthscale, model.noise))
    fixed = (model.lengthscale, model.noise) if cfg.freeze_hyperparameters else None
    for step in range(1, cfg.steps + 1):
        before = integrated_variance(model, R)
        picks = select_batch(model, X_pool, R, cfg.q, exclude=idx)
        idx += picks
        # same hyperparameters, new data: the variance actually removed
        grown = gpx.assemble(X_pool[idx], np.zeros(len(idx)), model.lengthscale, model.noise, model.jitter)
        after = integrated_variance(grown, R)
        init = (model.lengthscale, model.noise)
        model = _fit(X_pool[idx], y_pool[idx], cfg, rng, init=init, fixed=fixed)
        trace.steps.append(AlStep(step, picks, before, after, log_rmse(model, X_test, y_test),
                                  model.lengthscale, model.noise))
    return trace


def one_shot_log_rmse(X_pool, y_pool, X_test, y_test, n, seed=0, repetitions=20, n_starts=4):
    """log RMSE of GPs fitted once on ``n`` uniformly random pool points."""
    out = []
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep, 1])
        idx = np.sort(rng.choice(len(X_pool), size=n, replace=False))
        m = gpx.gp_fit(X_pool[idx], y_pool[idx], n_starts=n_starts, seed=int(rng.integers(2**63)))
        out.append(log_rmse(m, X_test, y_test))
    return np.array(out)
