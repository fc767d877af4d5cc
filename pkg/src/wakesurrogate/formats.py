"""Scan files, dataset directories and the CSV tables exchanged between stages.

Floats are written with 17 significant digits so every file round-trips
bit-exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import config
from .errors import ShapeMismatch
from .wakegen import Dataset, ParamVector, ScanGrid

SCAN_FORMAT = "WAKESCAN1"
MANIFEST = "manifest.json"


def _fmt(v):
    return "%.17g" % v


def write_scan(s: ScanGrid, path):
    rows, cols = s.shape
    lines = [f"{SCAN_FORMAT} {rows} {cols}"]
    lines += [",".join(_fmt(v) for v in row) for row in s.values]
    lines += [",".join("1" if m else "0" for m in row) for row in s.mask]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scan(path) -> ScanGrid:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != SCAN_FORMAT:
        raise ValueError(f"{path}: not a {SCAN_FORMAT} file")
    rows, cols = int(head[1]), int(head[2])
    if len(lines) < 1 + 2 * rows:
        raise ShapeMismatch(f"{path}: expected {2 * rows} data lines, found {len(lines) - 1}")
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1 : 1 + rows]])
    mask = np.array([[v.strip() == "1" for v in ln.split(",")] for ln in lines[1 + rows : 1 + 2 * rows]])
    if values.shape != (rows, cols) or mask.shape != (rows, cols):
        raise ShapeMismatch(f"{path}: rows do not all have {cols} columns")
    if (rows, cols) == (config.GRID_ROWS, config.GRID_COLS):
        return ScanGrid(values, mask)
    x = np.linspace(*config.X_RANGE, rows)
    r = np.linspace(*config.R_RANGE, cols)
    return ScanGrid(values, mask, x, r)


def write_dataset(ds: Dataset, outdir):
    """Scan files ``scans/00000.scan`` plus a JSON manifest."""
    out = Path(outdir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    records = []
    for i, (p, s) in enumerate(zip(ds.params, ds.scans)):
        rel = f"scans/{i:05d}.scan"
        write_scan(s, out / rel)
        records.append({"index": i, "params": p.as_dict(), "scan": rel})
    doc = {"format": "wakegen-dataset", "seed": ds.seed, "config": ds.config, "records": records}
    (out / MANIFEST).write_text(json.dumps(doc, sort_keys=True, indent=1))
    write_params_csv(ds.param_matrix(), out / "params.csv")
    return out / MANIFEST


def read_dataset(path) -> Dataset:
    path = Path(path)
    root = path.parent if path.is_file() else path
    doc = json.loads((root / MANIFEST if path.is_dir() else path).read_text())
    params, scans = [], []
    for rec in doc["records"]:
        params.append(ParamVector(**rec["params"]))
        scans.append(read_scan(root / rec["scan"]))
    return Dataset(params, scans, doc.get("seed"), doc.get("config", {}))


def write_params_csv(theta, path):
    theta = np.atleast_2d(theta)
    if theta.shape[1] != config.N_PARAMS:
        raise ShapeMismatch(f"expected {config.N_PARAMS} parameter columns, got {theta.shape[1]}")
    _write_table(path, list(config.PARAM_NAMES), theta)


def read_params_csv(path):
    header, data = _read_table(path)
    if tuple(header) != config.PARAM_NAMES:
        raise ShapeMismatch(f"{path}: columns {header} != {list(config.PARAM_NAMES)}")
    return data


def write_latents_csv(z, path):
    z = np.atleast_2d(z)
    _write_table(path, [f"z{j}" for j in range(z.shape[1])], z)


def read_latents_csv(path):
    return _read_table(path)[1]


def write_table(path, header, data):
    _write_table(path, header, data)


def read_table(path):
    return _read_table(path)


def _write_table(path, header, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(data):
            w.writerow([_fmt(v) for v in row])


def _read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    return header, data
