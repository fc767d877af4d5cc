"""End-to-end experiment: corpus -> autoencoder -> latents -> regressors -> reports.

One JSON config drives every stage. Each stage reads and writes plain
files, so any of them can be rerun on its own from earlier artifacts.
Output layout under ``output_dir``::

    config.json                 resolved config echo
    data/train, data/test       WAKESCAN1 scans + manifest.json + params.csv
    models/ae.model             autoencoder
    latents/train.csv, test.csv
    models/{mlp,gp,svgp}.model  latent regressors
    predictions/{kind}.csv      predicted test latents (and variances)
    reports/{kind}/             EvalReport JSON + CSVs
    al/                         active-learning traces and summary
    compare/                    side-by-side comparison table
    MANIFEST.json               every artifact with its SHA-256

A failed stage leaves ``FAILED`` and ``error.json`` next to the partial
artifacts and the run exits non-zero.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import traceback
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import active as al
from . import autoencoder as ae
from . import config as cfgmod
from . import formats, metrics, modelio, optim, wakegen
from .errors import ConfigError, TestSetMismatch
from .mlp import scale_inputs
from .regressors import GpRegressor, MlpRegressor, load_regressor

log = logging.getLogger(__name__)

MANIFEST = "MANIFEST.json"
FAILED = "FAILED"
ERROR = "error.json"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetBlock(_Block):
    n_train: int = Field(cfgmod.DEFAULT_N_TRAIN, ge=2)
    n_test: int = cfgmod.DEFAULT_N_TEST
    noise: float = Field(cfgmod.DEFAULT_NOISE_SD, ge=0)
    dropout: float = Field(cfgmod.DEFAULT_DROPOUT, ge=0, le=0.3)
    speedup_rate: float = Field(0.0, ge=0, le=1)
    seed: int = Field(ge=0)

    @field_validator("n_test")
    @classmethod
    def _test_nonempty(cls, v):
        if v <= 0:
            raise ValueError("n_test must be > 0")
        return v


class AeBlock(_Block):
    k: int = Field(4, ge=1)
    epochs: int = Field(50, ge=0)
    learning_rate: float = Field(1e-3, ge=0)
    batch_size: int = Field(32, ge=1)
    enc_channels: List[int] = [8, 16]
    seed: int = Field(ge=0)


class MlpBlock(_Block):
    widths: List[int] = [cfgmod.N_PARAMS, 64, 64, 4]
    epochs: int = Field(300, ge=0)
    seed: int = Field(ge=0)


class GpBlock(_Block):
    n_starts: int = Field(8, ge=1)
    seed: int = Field(ge=0)


class SvgpBlock(_Block):
    m: int = Field(64, ge=1)
    n_starts: int = Field(3, ge=1)
    seed: int = Field(ge=0)


class AlBlock(_Block):
    enabled: bool = True
    n0: int = Field(50, ge=2)
    steps: int = Field(100, ge=0)
    q: int = Field(1, ge=1, le=8)
    reps: int = Field(20, ge=1)
    dims: Optional[List[int]] = None
    pool_size: Optional[int] = None  # first rows of the training set; all by default
    baseline_n: int = Field(250, ge=2)
    q_sweep: List[int] = []  # extra batch sizes, each adding the same number of points
    reference: Literal["coupled", "box"] = "coupled"
    seed: int = Field(ge=0)


class ExperimentConfig(_Block):
    name: str = "experiment"
    dataset: DatasetBlock
    autoencoder: AeBlock
    mlp: MlpBlock
    gp: GpBlock
    svgp: SvgpBlock
    al: AlBlock
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.mlp.widths[-1] != self.autoencoder.k or self.mlp.widths[0] != cfgmod.N_PARAMS:
            raise ValueError(f"mlp widths must run from {cfgmod.N_PARAMS} to k={self.autoencoder.k}")
        if self.svgp.m > self.dataset.n_train:
            raise ValueError(f"svgp.m = {self.svgp.m} exceeds n_train = {self.dataset.n_train}")
        pool = self.al.pool_size or self.dataset.n_train
        if self.al.enabled:
            if pool > self.dataset.n_train:
                raise ValueError("al.pool_size exceeds n_train")
            if self.al.n0 + self.al.steps * max([self.al.q, *self.al.q_sweep]) > pool:
                raise ValueError("al: n0 + steps * q exceeds the pool")
            if self.al.baseline_n > pool:
                raise ValueError("al.baseline_n exceeds the pool")
            for d in self.al.dims or []:
                if not 0 <= d < self.autoencoder.k:
                    raise ValueError(f"al dim {d} outside [0, {self.autoencoder.k})")
        return self

    def echo(self):
        return self.model_dump(mode="json")


def _seeds(seed=0):
    return {"dataset": {"seed": seed}, "autoencoder": {"seed": seed}, "mlp": {"seed": seed},
            "gp": {"seed": seed}, "svgp": {"seed": seed}, "al": {"seed": seed}}


def _merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


PRESETS = {
    # full-size corpus with default settings
    "full": _merge(_seeds(0), {"name": "full"}),
    # desk scale used by the acceptance suite
    "desk": _merge(_seeds(0), {
        "name": "desk",
        "dataset": {"n_train": 1000, "n_test": 300},
        "autoencoder": {"epochs": 40},
        "mlp": {"epochs": 300},
        "gp": {"n_starts": 4},
        "al": {"n0": 50, "steps": 100, "q": 1, "reps": 20, "baseline_n": 250, "q_sweep": [2, 4, 8]},
    }),
    "minimal": _merge(_seeds(0), {
        "name": "minimal",
        "dataset": {"n_train": 200, "n_test": 50},
        "autoencoder": {"epochs": 20},
        "mlp": {"epochs": 100},
        "gp": {"n_starts": 2},
        "svgp": {"m": 32, "n_starts": 1},
        "al": {"n0": 20, "steps": 10, "q": 1, "reps": 2, "baseline_n": 30},
    }),
}


def preset(name, /, **overrides) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _merge(PRESETS[name], overrides)


def parse_config(doc) -> ExperimentConfig:
    """Validate a config dict (or JSON file path) before any work is done."""
    if isinstance(doc, (str, Path)):
        try:
            doc = json.loads(Path(doc).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _sha_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def dataset_hash(root) -> str:
    """Content hash of a dataset directory (manifest plus every scan file)."""
    root = Path(root)
    h = hashlib.sha256((root / formats.MANIFEST).read_bytes())
    for p in sorted((root / "scans").glob("*.scan")):
        h.update(modelio.file_sha256(p).encode())
    return h.hexdigest()


# ----------------------------------------------------------------------------
# stages; each takes explicit paths so the CLI can run them standalone


def stage_generate(cfg: ExperimentConfig, out: Path):
    d = cfg.dataset
    ds = wakegen.generate_dataset(d.n_train + d.n_test, d.noise, d.dropout, d.seed, d.speedup_rate)
    ds.config["experiment"] = cfg.echo()
    train = ds.subset(range(d.n_train))
    test = ds.subset(range(d.n_train, d.n_train + d.n_test))
    formats.write_dataset(train, out / "data" / "train")
    formats.write_dataset(test, out / "data" / "test")


def train_autoencoder(data_dir, out_path, epochs, seed, k=4, enc_channels=(8, 16), learning_rate=1e-3,
                      batch_size=32, echo=None):
    ds = formats.read_dataset(data_dir)
    arch = ae.AeArchitecture(enc_channels=tuple(enc_channels), k=k)
    tc = ae.AeTrainConfig(arch, optim.AdamConfig(learning_rate, epochs=epochs, seed=seed, batch_size=batch_size), seed)
    params, history = ae.ae_train(ds, tc)
    params.meta["loss_history"] = [float(v) for v in history]
    if echo is not None:
        params.meta["experiment"] = echo
    ae.save_ae(params, out_path)
    return params


def encode_dataset(model_path, data_dir, out_csv):
    params = ae.load_ae(model_path)
    ds = formats.read_dataset(data_dir)
    z = ae.encode(params, ds.scans)
    formats.write_latents_csv(z, out_csv)
    return z


def fit_regressor(kind, params_csv, latents_csv, out_path, seed=0, n_starts=None, m=64, epochs=300,
                  widths=None, dims=None, echo=None):
    theta = formats.read_params_csv(params_csv)
    Z = formats.read_latents_csv(latents_csv)
    if kind == "mlp":
        reg = MlpRegressor.fit(theta, Z, seed=seed, epochs=epochs, widths=widths)
        if echo is not None:
            reg.params.meta["experiment"] = echo
    else:
        source = {"params": params_csv, "latents": latents_csv, "rows": None}
        reg = GpRegressor.fit(kind, theta, Z, dims=dims, seed=seed, n_starts=n_starts, m=m, source=source)
        if echo is not None:
            for mdl in reg.models:
                mdl.meta["experiment"] = echo
    reg.save(out_path)
    return reg


def predict_file(model_path, params_csv, out_csv):
    reg = load_regressor(model_path)
    mean, var = reg.predict(formats.read_params_csv(params_csv))
    dims = getattr(reg, "dims", list(range(mean.shape[1])))
    header = [f"z{d}" for d in dims]
    data = mean
    if var is not None:
        header += [f"var{d}" for d in dims]
        data = np.column_stack([mean, var])
    formats.write_table(out_csv, header, data)
    return mean, var


def read_predictions(path):
    header, data = formats.read_table(path)
    cols = [i for i, h in enumerate(header) if h.startswith("z")]
    return data[:, cols]


def evaluate_files(name, ae_path, test_dir, latents_csv, predictions_csv, outdir, echo=None):
    params = ae.load_ae(ae_path)
    ds = formats.read_dataset(test_dir)
    z_true = formats.read_latents_csv(latents_csv)
    z_pred = read_predictions(predictions_csv)
    rep = metrics.evaluate(name, z_true, z_pred, params, ds.scans, dataset_hash(test_dir), echo)
    rep.write(outdir)
    return rep


def compare_models(report_paths, out_dir=None):
    """Side-by-side metrics of >= 2 reports on the same test set.

    Deltas are taken against the first report. Writes ``comparison.json``
    and ``comparison.csv`` when ``out_dir`` is given.
    """
    reps = [metrics.load_report(p) for p in report_paths]
    if len(reps) < 2:
        raise ValueError("need at least two reports")
    hashes = {r["test_hash"] for r in reps}
    if len(hashes) != 1:
        raise TestSetMismatch(f"reports come from {len(hashes)} different test sets")
    ref = reps[0]
    rows = []
    for r in reps:
        row = {"model": r["model"], "physical_mean_nmse": r["physical_mean_nmse"],
               "floor_mean_nmse": r["floor_mean_nmse"], "outlier_fraction": r["outlier_fraction"]}
        for j, (a, b) in enumerate(zip(r["r2"], r["rmse"])):
            row[f"r2_{j}"] = a
            row[f"rmse_{j}"] = b
            row[f"delta_r2_{j}"] = a - ref["r2"][j]
            row[f"delta_rmse_{j}"] = b - ref["rmse"][j]
        row["delta_physical_mean_nmse"] = r["physical_mean_nmse"] - ref["physical_mean_nmse"]
        rows.append(row)
    best = min(r["physical_mean_nmse"] for r in rows)
    for r in rows:
        r["ratio_to_best"] = r["physical_mean_nmse"] / best if best > 0 else float("inf")
    table = {"test_hash": hashes.pop(), "rows": rows}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(table, sort_keys=True, indent=1))
        cols = list(rows[0])
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([r["model"]] + ["%.17g" % r[c] for c in cols[1:]])
    return table


def write_trace_csv(traces, path):
    cols = ["repetition", "step", "selected_index", "integrated_variance", "log_rmse"]
    rows = [[r[c] for c in cols] for t in traces for r in t.rows()]
    formats.write_table(path, cols, rows)


def run_al(params_csv, latents_csv, test_params_csv, test_latents_csv, dim, n0, steps, q, reps, seed,
           pool_size=None, reference="coupled"):
    theta = formats.read_params_csv(params_csv)
    Z = formats.read_latents_csv(latents_csv)
    pool = slice(0, pool_size or len(theta))
    Xp, yp = scale_inputs(theta[pool]), Z[pool, dim]
    Xt = scale_inputs(formats.read_params_csv(test_params_csv))
    yt = formats.read_latents_csv(test_latents_csv)[:, dim]
    cfg = al.AlConfig(n0=n0, steps=steps, q=q, repetitions=reps, seed=seed, reference=reference)
    return al.al_run(Xp, yp, Xt, yt, cfg), (Xp, yp, Xt, yt)


def stage_al(cfg: ExperimentConfig, out: Path):
    a = cfg.al
    dims = a.dims if a.dims is not None else list(range(cfg.autoencoder.k))
    added = a.steps * a.q
    summary = {"n0": a.n0, "added": added, "baseline_n": a.baseline_n, "repetitions": a.reps, "dims": {}}
    for d in dims:
        traces, data = run_al(out / "data/train/params.csv", out / "latents/train.csv",
                              out / "data/test/params.csv", out / "latents/test.csv",
                              d, a.n0, a.steps, a.q, a.reps, a.seed, a.pool_size, a.reference)
        write_trace_csv(traces, out / "al" / f"trace_dim{d}.csv")
        one = al.one_shot_log_rmse(*data, a.baseline_n, seed=a.seed, repetitions=a.reps)
        entry = {
            "al_final_log_rmse": [t.final_log_rmse for t in traces],
            "al_mean_final_log_rmse": float(np.mean([t.final_log_rmse for t in traces])),
            "one_shot_log_rmse": one.tolist(),
            "one_shot_mean_log_rmse": float(one.mean()),
            "curves": {str(a.q): np.mean([t.log_rmse_curve() for t in traces], axis=0).tolist()},
        }
        for q in a.q_sweep:
            if q == a.q:
                continue
            steps = -(-added // q)
            tq, _ = run_al(out / "data/train/params.csv", out / "latents/train.csv",
                           out / "data/test/params.csv", out / "latents/test.csv",
                           d, a.n0, steps, q, a.reps, a.seed, a.pool_size, a.reference)
            write_trace_csv(tq, out / "al" / f"trace_dim{d}_q{q}.csv")
            entry["curves"][str(q)] = np.mean([t.log_rmse_curve() for t in tq], axis=0).tolist()
        summary["dims"][str(d)] = entry
    summary["experiment"] = cfg.echo()
    (out / "al" / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))


def _stages(cfg: ExperimentConfig, out: Path):
    echo = cfg.echo()
    a = cfg.autoencoder
    yield "generate", lambda: stage_generate(cfg, out)
    yield "ae", lambda: train_autoencoder(out / "data/train", out / "models/ae.model", a.epochs, a.seed, a.k,
                                          a.enc_channels, a.learning_rate, a.batch_size, echo)
    yield "encode", lambda: (encode_dataset(out / "models/ae.model", out / "data/train", out / "latents/train.csv"),
                             encode_dataset(out / "models/ae.model", out / "data/test", out / "latents/test.csv"))
    blocks = {"mlp": dict(seed=cfg.mlp.seed, epochs=cfg.mlp.epochs, widths=cfg.mlp.widths),
              "gp": dict(seed=cfg.gp.seed, n_starts=cfg.gp.n_starts),
              "svgp": dict(seed=cfg.svgp.seed, n_starts=cfg.svgp.n_starts, m=cfg.svgp.m)}
    for kind, kw in blocks.items():
        yield kind, lambda kind=kind, kw=kw: (
            fit_regressor(kind, out / "data/train/params.csv", out / "latents/train.csv",
                          out / f"models/{kind}.model", echo=echo, **kw),
            predict_file(out / f"models/{kind}.model", out / "data/test/params.csv", out / f"predictions/{kind}.csv"),
        )
    yield "evaluate", lambda: [
        evaluate_files(kind, out / "models/ae.model", out / "data/test", out / "latents/test.csv",
                       out / f"predictions/{kind}.csv", out / "reports" / kind, echo)
        for kind in blocks
    ]
    yield "compare", lambda: compare_models([out / "reports" / k for k in blocks], out / "compare")
    if cfg.al.enabled:
        yield "al", lambda: stage_al(cfg, out)


def _artifacts(out: Path):
    skip = {MANIFEST, FAILED, ERROR}
    return sorted(p for p in out.rglob("*") if p.is_file() and p.relative_to(out).as_posix() not in skip)


def write_manifest(out: Path, config_sha):
    entries = [{"path": p.relative_to(out).as_posix(), "sha256": modelio.file_sha256(p), "bytes": p.stat().st_size}
               for p in _artifacts(out)]
    doc = {"config_sha256": config_sha, "artifacts": entries}
    (out / MANIFEST).write_text(json.dumps(doc, sort_keys=True, indent=1))
    return doc


def _up_to_date(out: Path, config_sha):
    m = out / MANIFEST
    if not m.exists() or (out / FAILED).exists():
        return False
    doc = json.loads(m.read_text())
    if doc.get("config_sha256") != config_sha:
        return False
    for e in doc["artifacts"]:
        p = out / e["path"]
        if not p.exists() or modelio.file_sha256(p) != e["sha256"]:
            return False
    return True


def run_pipeline(config, output_dir=None, force=False) -> int:
    """Run every stage; returns a process exit status (0 on success).

    Reruns with an unchanged config and intact artifacts are skipped.
    """
    cfg = config if isinstance(config, ExperimentConfig) else parse_config(config)
    out = Path(output_dir or cfg.output_dir or "wake-experiment")
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(cfg.echo(), sort_keys=True, indent=1)
    config_sha = _sha_text(text)
    if not force and _up_to_date(out, config_sha):
        log.info("artifacts in %s are up to date", out)
        return 0
    for stale in (FAILED, ERROR, MANIFEST):
        (out / stale).unlink(missing_ok=True)
    (out / "config.json").write_text(text)
    for name, run in _stages(cfg, out):
        t0 = time.perf_counter()
        try:
            run()
        except Exception as exc:  # recorded, then reported through the exit status
            record = {"stage": name, "error": type(exc).__name__, "message": str(exc),
                      "traceback": traceback.format_exc()}
            (out / ERROR).write_text(json.dumps(record, sort_keys=True, indent=1))
            (out / FAILED).write_text(f"{name}\n")
            log.error("stage %s failed: %s", name, exc)
            return 1
        log.info("stage %s done in %.1f s", name, time.perf_counter() - t0)
    write_manifest(out, config_sha)
    return 0
