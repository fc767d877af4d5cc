"""Model files: a JSON header plus base64-encoded little-endian float64 blobs."""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ModelFileError

FORMAT = "WAKEMODEL1"


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"dtype": "<f8", "shape": list(a.shape), "b64": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["b64"])
    a = np.frombuffer(raw, dtype=d.get("dtype", "<f8")).astype(float)
    return a.reshape(d["shape"])


def dumps(obj) -> str:
    # sorted keys + repr floats keep files byte-identical across runs
    return json.dumps(obj, sort_keys=True, indent=1)


def save_model(path, kind: str, header: dict, params=None) -> Path:
    path = Path(path)
    doc = {"format": FORMAT, "kind": kind, "header": header}
    if params is not None:
        params = np.asarray(params, dtype=float).ravel()
        doc["param_count"] = int(params.size)
        doc["params"] = encode_array(params)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    return path


def load_model(path, kind: str | None = None):
    """Returns ``(header, params)``; ``params`` is None for parameter-free files."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ModelFileError(f"{path}: not a {FORMAT} file")
    if kind is not None and doc.get("kind") != kind:
        raise ModelFileError(f"{path}: expected a {kind!r} model, found {doc.get('kind')!r}")
    params = None
    if "params" in doc:
        params = decode_array(doc["params"])
        if params.size != doc.get("param_count"):
            raise ModelFileError(f"{path}: parameter blob has {params.size} values, header says {doc.get('param_count')}")
    return doc["header"], params


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_kind(path) -> str:
    """The ``kind`` field of a model file (``ae``, ``mlp``, ``gp``, ``svgp``)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ModelFileError(f"{path}: not a {FORMAT} file")
    return doc.get("kind")
