"""End-to-end acceptance checks, one test per criterion.

The desk-scale pipeline (1000 training and 300 test scans, active learning
with 20 repetitions and the q sweep) runs once per session and is shared by
the AL, parity and latency checks; the determinism check runs it a second
time into a separate directory.
"""

import json
import logging
import time
import warnings

import numpy as np
import pytest
from fastapi.testclient import TestClient

from wakesurrogate import active, gp, pipeline, svgp
from wakesurrogate import autoencoder as ae
from wakesurrogate import mlp
from wakesurrogate.optim import AdamConfig
from wakesurrogate.service import create_app
from wakesurrogate.surrogate import load_artifacts
from wakesurrogate.wakegen import generate_dataset

from conftest import record_criterion
from gradcheck import fd_gradient, rel_error

pytestmark = pytest.mark.acceptance


class _StageTimes(logging.Handler):
    def __init__(self):
        super().__init__()
        self.times = {}

    def emit(self, record):
        if record.msg == "stage %s done in %.1f s":
            self.times[record.args[0]] = record.args[1]


def _run_desk(out):
    handler = _StageTimes()
    logger = logging.getLogger("wakesurrogate.pipeline")
    logger.addHandler(handler)
    old = logger.level
    logger.setLevel(logging.INFO)
    try:
        t0 = time.perf_counter()
        status = pipeline.run_pipeline(pipeline.preset("desk"), out, force=True)
        total = time.perf_counter() - t0
    finally:
        logger.removeHandler(handler)
        logger.setLevel(old)
    assert status == 0, (out / pipeline.ERROR).read_text()
    return handler.times, total


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "run"
    times, total = _run_desk(out)
    return out, times, total


# -- 1 ---------------------------------------------------------------------
def _random_ae(rng):
    stages = int(rng.integers(1, 3))
    grid = (int(rng.integers(3, 9)), int(rng.integers(3, 9)))
    s = 2**stages
    padded = tuple(-(-g // s) * s for g in grid)
    arch = ae.AeArchitecture(grid, padded, tuple(int(c) for c in rng.integers(1, 4, size=stages)),
                             int(rng.integers(1, 4)), int(rng.choice([3, 5])))
    flat = ae.init_params(arch, int(rng.integers(1000))) + 0.1 * rng.normal(size=arch.param_count)
    return ae.AeParams(arch, flat, 0.1 * rng.normal(size=grid), 1.0)


def _random_mlp(rng):
    widths = (int(rng.integers(1, 8)), *(int(w) for w in rng.integers(2, 10, size=rng.integers(1, 4))),
              int(rng.integers(1, 5)))
    return mlp.MlpParams(widths, mlp.init_params(widths, int(rng.integers(1000))) + 0.1 * rng.normal(size=mlp.param_count(widths)))


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        p = _random_ae(rng)
        x = rng.normal(size=(2, *p.arch.grid_shape))
        _, g = ae.loss_and_grad(p, x)
        worst = max(worst, rel_error(g, fd_gradient(lambda f: ae.loss_and_grad(p, x, f)[0], p.flat)))
    for _ in range(20):
        p = _random_mlp(rng)
        x, y = rng.normal(size=(6, p.widths[0])), rng.normal(size=(6, p.widths[-1]))
        _, g = mlp.mlp_loss_and_grad(p, x, y)
        worst = max(worst, rel_error(g, fd_gradient(lambda f: mlp.mlp_loss(p, x, y, f), p.flat)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 60
    record_criterion(1, ok, f"worst relative error {worst:.2e} over 20 AE + 20 MLP architectures, {dt:.1f} s")
    assert ok


# -- 2 ---------------------------------------------------------------------
def test_criterion_2_exact_gp_algebra():
    rng = np.random.default_rng(7)
    worst, var_ok, interp = 0.0, True, 0.0
    for _ in range(30):
        n = int(rng.integers(1, 51))
        X, y, T = rng.random((n, 7)), rng.normal(size=n), rng.random((20, 7))
        ell, noise = rng.uniform(0.1, 1.5), 10 ** rng.uniform(-3, 0)
        m = gp.assemble(X, y, ell, noise, jitter=0.0)
        K = m.kernel(X, X) + noise * np.eye(n)
        k = m.kernel(X, T)
        Kinv = np.linalg.inv(K)
        mean, var = gp.gp_predict(m, T)
        ref_mean = k.T @ Kinv @ y
        ref_var = 1.0 - np.sum(k * (Kinv @ k), axis=0)
        worst = max(worst, np.max(np.abs(mean - ref_mean)), np.max(np.abs(var - ref_var)))
        var_ok &= bool(np.all(var <= 1.0))
        Xi = rng.random((min(n, 30), 7))
        yi = rng.normal(size=len(Xi))
        mi, _ = gp.gp_predict(gp.assemble(Xi, yi, 0.5, 0.0), Xi)
        interp = max(interp, np.max(np.abs(mi - yi)))
    ok = worst < 1e-8 and var_ok and interp < 1e-4
    record_criterion(2, ok, f"max deviation from naive inverse {worst:.1e}, posterior var <= prior: {var_ok}, "
                            f"noiseless interpolation error {interp:.1e}")
    assert ok


# -- 3 ---------------------------------------------------------------------
def test_criterion_3_elbo_tightness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    tight = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 40))
        X, y = rng.random((n, 7)), rng.normal(size=n)
        ell, noise = rng.uniform(0.2, 1.5), 10 ** rng.uniform(-2, 0)
        exact = gp.log_marginal_likelihood(X, y, np.log(ell), np.log(noise), jitter=0.0, grad=False)
        tight = max(tight, abs(svgp.svgp_elbo(ell, noise, X, X, y) - exact) / abs(exact))
    violations = 0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        X, y = rng.random((n, 7)), rng.normal(size=n)
        Z = rng.random((int(rng.integers(1, n)), 7))
        ell, noise = rng.uniform(0.1, 2.0), 10 ** rng.uniform(-3, 0.5)
        exact = gp.log_marginal_likelihood(X, y, np.log(ell), np.log(noise), jitter=0.0, grad=False)
        violations += svgp.svgp_elbo(ell, noise, Z, X, y) > exact
    dt = time.perf_counter() - t0
    ok = tight < 1e-6 and violations == 0 and dt < 60
    record_criterion(3, ok, f"m = n relative gap {tight:.1e}; bound violated on {violations}/100 instances; {dt:.1f} s")
    assert ok


# -- 4 ---------------------------------------------------------------------
def test_criterion_4_svgp_linear_in_n():
    rng = np.random.default_rng(3)
    Z = rng.random((64, 7))
    times = {}
    for n in (1000, 2000, 4000):
        X, y = rng.random((n, 7)), rng.normal(size=n)
        svgp.svgp_elbo(0.5, 0.1, Z, X, y)
        runs = []
        for _ in range(7):
            t0 = time.perf_counter()
            svgp.svgp_elbo(0.5, 0.1, Z, X, y)
            runs.append(time.perf_counter() - t0)
        times[n] = min(runs)
    ratios = {n: (times[n] / times[1000]) / (n / 1000) for n in (2000, 4000)}
    ok = all(1 / 3 <= r <= 3 for r in ratios.values())
    detail = ", ".join(f"n={n}: {1e3 * t:.2f} ms" for n, t in times.items())
    record_criterion(4, ok, f"{detail}; time ratio / n ratio = {ratios[2000]:.2f}, {ratios[4000]:.2f}")
    assert ok


# -- 5 ---------------------------------------------------------------------
def test_criterion_5_acquisition_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 21))
        X = rng.random((n, 7))
        m = gp.assemble(X, np.zeros(n), rng.uniform(0.1, 1.5), 10 ** rng.uniform(-4, 0))
        R = rng.random((40, 7))
        before = active.integrated_variance(m, R)
        for c in rng.random((5, 7)):
            g = gp.assemble(np.vstack([X, c]), np.zeros(n + 1), m.lengthscale, m.noise, m.jitter)
            worst = max(worst, abs(active.expected_ivar_reduction(m, c, R) - (before - active.integrated_variance(g, R))))
    rs = np.random.default_rng(6)
    P = rs.random((200, 7))
    y = np.sin(3 * P[:, 0]) + P[:, 1]
    cfg = active.AlConfig(n0=10, steps=20, repetitions=2, n_starts=1, freeze_hyperparameters=True, reference_size=128)
    traces = active.al_run(P, y, P[:50], y[:50], cfg)
    monotone = all(np.all(np.diff([s.ivar_after for s in t.steps]) <= 1e-12) for t in traces)
    ok = worst < 1e-8 and monotone
    record_criterion(5, ok, f"max |closed form - refit| {worst:.1e}; fixed-hyperparameter ivar monotone: {monotone}")
    assert ok


# -- 6 ---------------------------------------------------------------------
def test_criterion_6_al_beats_one_shot(desk):
    out, times, _ = desk
    s = json.loads((out / "al" / "summary.json").read_text())
    dims = sorted(s["dims"], key=int)
    al = [s["dims"][d]["al_mean_final_log_rmse"] for d in dims]
    base = [s["dims"][d]["one_shot_mean_log_rmse"] for d in dims]
    wins = sum(a <= b for a, b in zip(al, base))
    sweep_ok = all(set(map(str, [1, 2, 4, 8])) <= set(map(str, s["dims"][d]["curves"])) for d in dims)
    t_al = times.get("al", float("inf"))
    ok = wins >= 3 and sweep_ok and t_al <= 1800
    pairs = ", ".join(f"dim {d}: {a:.3f} vs {b:.3f}" for d, a, b in zip(dims, al, base))
    record_criterion(6, ok, f"AL(150) vs one-shot(250) mean log RMSE {pairs}; wins {wins}/4; "
                            f"q sweep complete: {sweep_ok}; stage {t_al:.0f} s")
    assert ok


# -- 7 ---------------------------------------------------------------------
def test_criterion_7_compression_fidelity():
    t0 = time.perf_counter()
    train = generate_dataset(500, noise_sd=0.0, dropout_rate=0.0, seed=70)
    test = generate_dataset(100, noise_sd=0.0, dropout_rate=0.0, seed=71)
    cfg = ae.AeTrainConfig(adam=AdamConfig(epochs=60, seed=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p, _ = ae.ae_train(train, cfg)
    truth = np.stack([s.values for s in test.scans])
    z = ae.encode(p, truth)
    rec = ae.decode(p, z)
    nmse = float(np.mean(np.mean((rec - truth) ** 2, axis=(1, 2)) / truth.var(axis=(1, 2))))
    dt = time.perf_counter() - t0
    n_in = int(np.prod(p.arch.grid_shape))
    ok = nmse <= 0.05 and z.shape[1] == 4 and n_in == 2501 and dt <= 900
    record_criterion(7, ok, f"held-out NMSE {nmse:.4f}, 2501 -> {z.shape[1]} ({n_in} inputs), {dt:.0f} s")
    assert ok


# -- 8 ---------------------------------------------------------------------
def test_criterion_8_end_to_end_parity(desk):
    out, _, _ = desk
    rows = {r["model"]: r for r in json.loads((out / "compare" / "comparison.json").read_text())["rows"]}
    within = all(r["ratio_to_best"] <= 2.0 for r in rows.values())
    above = {k: r["physical_mean_nmse"] >= r["floor_mean_nmse"] for k, r in rows.items()}
    floor = next(iter(rows.values()))["floor_mean_nmse"]
    ok = within and all(above.values())
    detail = ", ".join(f"{k} {r['physical_mean_nmse']:.4f} (x{r['ratio_to_best']:.2f})" for k, r in rows.items())
    record_criterion(8, ok, f"physical mean NMSE {detail}; floor {floor:.4f}; within 2x: {within}; "
                            f">= floor: {above}")
    assert ok


# -- 9 ---------------------------------------------------------------------
def test_criterion_9_determinism(desk, tmp_path):
    out, _, _ = desk
    _run_desk(tmp_path / "again")
    a = json.loads((out / "MANIFEST.json").read_text())
    b = json.loads((tmp_path / "again" / "MANIFEST.json").read_text())
    ha = {e["path"]: e["sha256"] for e in a["artifacts"]}
    hb = {e["path"]: e["sha256"] for e in b["artifacts"]}
    differ = sorted(p for p in ha.keys() | hb.keys() if ha.get(p) != hb.get(p))
    ok = not differ and a["config_sha256"] == b["config_sha256"]
    record_criterion(9, ok, f"{len(ha)} artifacts compared, {len(differ)} differ {differ[:5]}")
    assert ok


# -- 10 --------------------------------------------------------------------
def test_criterion_10_latency(desk):
    out, _, _ = desk
    surrogates = load_artifacts(out)
    theta = np.array([[8.0, 8.4, 0.1, 0.0, 1100.0, 12.5, 1.0]])
    worst = 0.0
    for s in surrogates.values():
        s.predict(theta)
        t0 = time.perf_counter()
        _, field, _ = s.predict(theta)
        worst = max(worst, time.perf_counter() - t0)
        assert field.shape == (1, 61, 41)
    client = TestClient(create_app(surrogates=surrogates))
    point = dict(zip(pipeline.cfgmod.PARAM_NAMES, theta[0]))
    t0 = time.perf_counter()
    res = client.post("/predict", json={"model": "gp", "points": [point], "include_field": True})
    http = time.perf_counter() - t0
    ok = worst < 1.0 and http < 1.0 and res.status_code == 200
    record_criterion(10, ok, f"slowest in-process query {1e3 * worst:.1f} ms, HTTP round trip {1e3 * http:.1f} ms")
    assert ok
