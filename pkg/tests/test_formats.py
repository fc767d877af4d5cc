import numpy as np
import pytest

from wakesurrogate import formats
from wakesurrogate.errors import ShapeMismatch
from wakesurrogate.wakegen import generate_dataset


def test_dataset_roundtrip_is_lossless(tmp_path):
    ds = generate_dataset(5, seed=21)
    formats.write_dataset(ds, tmp_path)
    back = formats.read_dataset(tmp_path)
    assert back.params == ds.params
    assert all(a == b for a, b in zip(back.scans, ds.scans))
    assert back.seed == 21


def test_scan_header_and_layout(tmp_path):
    ds = generate_dataset(1, seed=1)
    p = tmp_path / "one.scan"
    formats.write_scan(ds.scans[0], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "WAKESCAN1 61 41"
    assert len(lines) == 1 + 2 * 61
    assert set(lines[-1].split(",")) <= {"0", "1"}


def test_bad_scan_header(tmp_path):
    p = tmp_path / "x.scan"
    p.write_text("NOTASCAN 2 2\n")
    with pytest.raises(ValueError):
        formats.read_scan(p)


def test_param_table_roundtrip(tmp_path, rng):
    theta = rng.random((7, 7))
    formats.write_params_csv(theta, tmp_path / "p.csv")
    assert np.array_equal(formats.read_params_csv(tmp_path / "p.csv"), theta)
    z = rng.normal(size=(7, 4))
    formats.write_latents_csv(z, tmp_path / "z.csv")
    assert np.array_equal(formats.read_latents_csv(tmp_path / "z.csv"), z)


def test_param_table_wrong_width(tmp_path):
    with pytest.raises(ShapeMismatch):
        formats.write_params_csv(np.zeros((2, 3)), tmp_path / "p.csv")
