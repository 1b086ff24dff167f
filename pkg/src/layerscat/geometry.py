"""Contrast specifications: where the layer is and what it is made of."""

from __future__ import annotations

import dataclasses
import pathlib
from typing import Any, Dict, Mapping, Optional

import numpy as np

ABSORBING = "absorbing-imaging"
REAL_TE = "real-TE"
MODES = (ABSORBING, REAL_TE)

GEOMETRIES = (
    "piecewise-linear-layer",
    "sinusoidal-layer",
    "ball",
    "cross",
    "slab",
    "custom-mask",
)

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "piecewise-linear-layer": {"offset": 0.0, "thickness": 0.5, "amplitude": 0.4},
    "sinusoidal-layer": {"offset": 0.0, "thickness": 0.6, "amplitude": 0.25},
    "ball": {"radius": 0.8, "center": [0.0, 0.0]},
    "cross": {"arm_length": 1.0, "arm_width": 0.3, "center": [0.0, 0.0]},
    "slab": {"half_thickness": 0.5, "offset": 0.0},
    "custom-mask": {"path": None, "extent_x2": 1.0},
}

DEFAULT_Q_IMAGING = 1.5 - 0.5j
DEFAULT_Q_REAL = 1.5
# Ratio of the truncation half-height h to the largest |x2| of the support.
H_FACTOR = 1.25


class GeometryError(ValueError):
    """Invalid geometry parameters or contrast matrix."""


def _tent(x1):
    return 1.0 - 2.0 * np.abs(x1) / np.pi


def load_mask(path) -> np.ndarray:
    """Reads a boolean mask from ``.npy``, ``.csv`` or ``.pgm``; row 0 is the top (largest x2)."""
    path = pathlib.Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path)
    elif suffix == ".csv":
        arr = np.loadtxt(path, delimiter=",")
    elif suffix == ".pgm":
        from layerscat.io import read_pgm

        arr = read_pgm(path)
    else:
        raise GeometryError(f"unsupported mask format {suffix!r}")
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.size == 0:
        raise GeometryError(f"mask must be a non-empty 2D array, got shape {arr.shape}")
    return arr != 0


@dataclasses.dataclass(frozen=True, eq=False)
class ContrastSpec:
    """A constant contrast ``Q = A - I`` on a support described by a named geometry.

    Attributes:
        geometry: One of :data:`GEOMETRIES`.
        params: Geometry parameters (lengths in the units of the 2pi period).
        q_matrix: Complex symmetric 2x2 contrast on the support.
        mode: ``"absorbing-imaging"`` (Re Q > 0, Im Q < 0) or ``"real-TE"`` (Im Q = 0, Re Q > 0).
        mask_array: Pixel mask for ``"custom-mask"``; row 0 at the top.
    """

    geometry: str
    params: Mapping[str, Any]
    q_matrix: np.ndarray
    mode: str = ABSORBING
    mask_array: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise GeometryError(f"unknown geometry {self.geometry!r}; choose from {GEOMETRIES}")
        if self.mode not in MODES:
            raise GeometryError(f"unknown mode {self.mode!r}; choose from {MODES}")
        q = np.asarray(self.q_matrix, dtype=complex)
        if q.shape != (2, 2):
            raise GeometryError(f"q_matrix must be 2x2, got {q.shape}")
        object.__setattr__(self, "q_matrix", q)
        self._check_q()
        self._check_profiles()

    # -- invariants ---------------------------------------------------------

    def _check_q(self):
        q = self.q_matrix
        if q[0, 1] != q[1, 0]:
            raise GeometryError("q_matrix must be symmetric (Q12 == Q21)")
        if self.is_zero:
            return
        re_min = np.linalg.eigvalsh(q.real).min()
        im_max = np.linalg.eigvalsh(q.imag).max()
        if self.mode == ABSORBING:
            if re_min <= 0:
                raise GeometryError(f"Re Q must be positive definite (min eigenvalue {re_min:.3g})")
            if im_max >= 0:
                raise GeometryError(f"Im Q must be negative definite (max eigenvalue {im_max:.3g})")
        else:
            if np.any(q.imag != 0):
                raise GeometryError("real-TE mode requires Im Q = 0")
            if re_min <= 0:
                raise GeometryError(f"Re Q must be positive definite (min eigenvalue {re_min:.3g})")

    def _check_profiles(self):
        g, p = self.geometry, self.params
        if g in ("piecewise-linear-layer", "sinusoidal-layer"):
            x = np.linspace(-np.pi, np.pi, 2001)
            lo, hi = self.profiles(x)
            if np.any(lo >= hi):
                raise GeometryError(f"{g}: profiles violate f_- < f_+")
        elif g == "ball":
            if p["radius"] <= 0:
                raise GeometryError("ball radius must be positive")
            if abs(p["center"][0]) + p["radius"] >= np.pi:
                raise GeometryError("ball must fit strictly inside one period")
        elif g == "cross":
            if not 0 < p["arm_width"] < p["arm_length"]:
                raise GeometryError("cross needs 0 < arm_width < arm_length")
            if abs(p["center"][0]) + p["arm_length"] >= np.pi:
                raise GeometryError("cross must fit strictly inside one period")
        elif g == "slab":
            if p["half_thickness"] <= 0:
                raise GeometryError("slab half_thickness must be positive")
        elif g == "custom-mask":
            if self.mask_array is None or not np.any(self.mask_array):
                raise GeometryError("custom-mask needs a non-empty mask_array")

    def check_inside(self, h: float):
        """Rejects supports that reach the truncation boundaries ``|x2| = h``."""
        top = self.support_half_height()
        if top >= h:
            raise GeometryError(f"support reaches |x2| = {top:.4g} >= h = {h:.4g}")

    # -- geometry -------------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not np.any(self.q_matrix)

    def profiles(self, x1):
        """Lower and upper profiles ``(f_-, f_+)`` of the full-period layer geometries."""
        p = self.params
        x1 = np.asarray(x1, dtype=float)
        if self.geometry == "piecewise-linear-layer":
            mid = p["offset"] + p["amplitude"] * _tent(x1)
            return mid - 0.5 * p["thickness"], mid + 0.5 * p["thickness"]
        if self.geometry == "sinusoidal-layer":
            half = 0.5 * p["thickness"] + p["amplitude"] * np.cos(x1)
            return p["offset"] - half, p["offset"] + half
        if self.geometry == "slab":
            t = p["half_thickness"]
            return np.full_like(x1, p["offset"] - t), np.full_like(x1, p["offset"] + t)
        raise GeometryError(f"{self.geometry} is not described by profiles")

    def mask(self, points) -> np.ndarray:
        """Boolean membership of ``points`` (shape ``(..., 2)``) in the support, one period."""
        pts = np.asarray(points, dtype=float)
        x1, x2 = pts[..., 0], pts[..., 1]
        p = self.params
        g = self.geometry
        if g in ("piecewise-linear-layer", "sinusoidal-layer", "slab"):
            lo, hi = self.profiles(x1)
            return (x2 > lo) & (x2 < hi)
        if g == "ball":
            c = p["center"]
            return np.hypot(x1 - c[0], x2 - c[1]) <= p["radius"]
        if g == "cross":
            c = p["center"]
            dx, dy = np.abs(x1 - c[0]), np.abs(x2 - c[1])
            L, w = p["arm_length"], p["arm_width"]
            return ((dx <= w) & (dy <= L)) | ((dx <= L) & (dy <= w))
        m = self.mask_array
        e = p["extent_x2"]
        ny, nx = m.shape
        col = np.floor((x1 + np.pi) / (2 * np.pi) * nx).astype(int)
        row = np.floor((e - x2) / (2 * e) * ny).astype(int)
        ok = (col >= 0) & (col < nx) & (row >= 0) & (row < ny)
        out = np.zeros(x1.shape, dtype=bool)
        out[ok] = m[row[ok], col[ok]]
        return out

    def support_half_height(self) -> float:
        """Largest ``|x2|`` reached by the support."""
        g, p = self.geometry, self.params
        if g in ("piecewise-linear-layer", "sinusoidal-layer", "slab"):
            x = np.linspace(-np.pi, np.pi, 4001)
            lo, hi = self.profiles(x)
            return float(max(np.abs(lo).max(), np.abs(hi).max()))
        if g == "ball":
            return abs(p["center"][1]) + p["radius"]
        if g == "cross":
            return abs(p["center"][1]) + p["arm_length"]
        m = self.mask_array
        e = p["extent_x2"]
        rows = np.flatnonzero(m.any(axis=1))
        ny = m.shape[0]
        edges = e - 2 * e * np.array([rows.min(), rows.max() + 1]) / ny
        return float(np.abs(edges).max())

    def flat_interfaces(self) -> tuple:
        """Levels ``x2`` of horizontal material interfaces (only the slab has them)."""
        if self.geometry == "slab":
            p = self.params
            return (p["offset"] - p["half_thickness"], p["offset"] + p["half_thickness"])
        return ()

    def default_h(self) -> float:
        return H_FACTOR * self.support_half_height()

    def q_field(self, points) -> np.ndarray:
        """``Q`` sampled at ``points``: shape ``(..., 2, 2)``, zero off the support."""
        inside = self.mask(points)
        return inside[..., None, None] * self.q_matrix

    def with_q(self, q_matrix) -> "ContrastSpec":
        return dataclasses.replace(self, q_matrix=q_matrix)

    def to_dict(self) -> dict:
        q = self.q_matrix
        return {
            "geometry": self.geometry,
            "params": {k: v for k, v in self.params.items()},
            "q_matrix": [[str(complex(q[i, j])) for j in range(2)] for i in range(2)],
            "mode": self.mode,
        }


def builtin_geometry(name: str, params: Optional[Mapping[str, Any]] = None, q=None,
                     mode: str = ABSORBING) -> ContrastSpec:
    """Builds a :class:`ContrastSpec` for one of the named families.

    Args:
        name: Geometry family.
        params: Overrides of :data:`DEFAULT_PARAMS` for that family.
        q: Scalar (``q * I``) or 2x2 contrast; defaults to ``1.5 - 0.5i`` for imaging
            and ``1.5`` for the real-TE mode.
        mode: Contrast mode.
    """
    if name not in GEOMETRIES:
        raise GeometryError(f"unknown geometry {name!r}; choose from {GEOMETRIES}")
    merged = dict(DEFAULT_PARAMS[name])
    merged.update(params or {})
    if q is None:
        q = DEFAULT_Q_IMAGING if mode == ABSORBING else DEFAULT_Q_REAL
    q = np.asarray(q, dtype=complex)
    if q.ndim == 0:
        q = q * np.eye(2)
    mask = None
    if name == "custom-mask":
        src = merged.get("mask")
        if src is None:
            if merged.get("path") is None:
                raise GeometryError("custom-mask requires params.path or params.mask")
            src = load_mask(merged["path"])
        mask = np.asarray(src) != 0
        merged.pop("mask", None)
    return ContrastSpec(name, merged, q, mode, mask)
