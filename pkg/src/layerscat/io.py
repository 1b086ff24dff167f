"""Deterministic CSV, PGM and JSON writers."""

from __future__ import annotations

import csv
import json
import pathlib
from typing import Iterable, Sequence

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> pathlib.Path:
    """Writes a UTF-8 CSV with a header row; floats use shortest round-trip formatting."""
    path = pathlib.Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def to_gray(values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Linear map of non-negative values to 0..255 (``vmax`` defaults to the maximum)."""
    v = np.asarray(values, dtype=float)
    top = float(v.max()) if vmax is None else vmax
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.clip(np.rint(255.0 * v / top), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> pathlib.Path:
    """Writes an 8-bit binary (P5) graymap; ``image[0]`` is the top row."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2D uint8 image")
    path = pathlib.Path(path)
    rows, cols = img.shape
    with path.open("wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
    return path


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Reads a P5 or P2 graymap into a 2D integer array (row 0 at the top)."""
    data = pathlib.Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        body = data[pos + 1:]
        return np.frombuffer(body, dtype=dtype, count=w * h).reshape(h, w).astype(int)
    if magic == b"P2":
        values = data[pos:].split()
        return np.array([int(v) for v in values[: w * h]]).reshape(h, w)
    raise ValueError(f"{path}: not a PGM file (magic {magic!r})")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, pathlib.Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload: dict) -> pathlib.Path:
    path = pathlib.Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
    return path
