import json

import numpy as np
import pytest

from layerscat import io


def test_pgm_round_trip(tmp_path):
    img = (np.arange(24).reshape(4, 6) * 10).astype(np.uint8)
    path = io.write_pgm(tmp_path / "a.pgm", img)
    data = path.read_bytes()
    assert data.startswith(b"P5\n6 4\n255\n") and len(data) == len(b"P5\n6 4\n255\n") + 24
    assert np.array_equal(io.read_pgm(path), img)


def test_ascii_pgm_with_comment(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_text("P2\n# note\n2 2\n255\n0 255\n10 20\n")
    assert np.array_equal(io.read_pgm(path), [[0, 255], [10, 20]])


def test_pgm_rejects_non_images(tmp_path):
    with pytest.raises(ValueError):
        io.write_pgm(tmp_path / "c.pgm", np.zeros(3, dtype=np.uint8))
    bad = tmp_path / "d.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        io.read_pgm(bad)


def test_to_gray():
    assert np.array_equal(io.to_gray(np.array([0.0, 0.5, 1.0])), [0, 128, 255])
    assert np.all(io.to_gray(np.zeros(3)) == 0)


def test_csv_round_trips_floats(tmp_path):
    vals = [0.1, 1 / 3, -2.5e-17]
    path = io.write_csv(tmp_path / "x.csv", ["i", "v"], [(i, v) for i, v in enumerate(vals)])
    lines = path.read_text().splitlines()
    assert lines[0] == "i,v"
    assert [float(line.split(",")[1]) for line in lines[1:]] == vals


def test_json_sorted_and_serializes_numpy(tmp_path):
    path = io.write_json(tmp_path / "m.json", {"b": np.float64(1.5), "a": np.arange(2), "c": 1 + 2j})
    assert json.loads(path.read_text()) == {"a": [0, 1], "b": 1.5, "c": [1.0, 2.0]}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
