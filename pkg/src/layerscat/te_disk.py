"""Real transmission eigenvalues of a homogeneous isotropic disk.

With ``w = J_m(k r / sqrt(a)) e^{i m theta}`` inside and ``v = J_m(k r) e^{i m theta}``,
the matching conditions ``w = v`` and ``a d_r w = d_r v`` on ``r = eps`` have a
nontrivial solution exactly when

    d_m(k) = J_m(k eps / sqrt(a)) J_m'(k eps) - sqrt(a) J_m'(k eps / sqrt(a)) J_m(k eps)

vanishes.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Dict, List, Optional

import numpy as np

from layerscat.numerics import BESSEL_MAX_ARG, BESSEL_MAX_ORDER, bessel_j, bisect, bracket_sign_changes

DEDUP_TOL = 1e-8
ROOT_XTOL = 1e-10
SCAN_FRACTION = 1e-3


@dataclasses.dataclass(frozen=True)
class DiskTEProblem:
    """Disk of radius ``radius`` with coefficient ``A = a_min I`` in a unit background.

    Attributes:
        radius: Disk radius ``eps > 0``.
        a_min: Constant coefficient, positive and different from 1.
        max_order: Largest Fourier order scanned.
        k_lo: Lower end of the search interval.
        k_hi: Upper end of the search interval.
    """

    radius: float
    a_min: float
    max_order: int = 15
    k_lo: float = 0.05
    k_hi: float = 15.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.a_min > 0:
            raise ValueError(f"a_min must be positive, got {self.a_min}")
        if self.a_min == 1:
            raise ValueError("a_min must differ from 1 (zero contrast)")
        if not 0 <= self.max_order <= BESSEL_MAX_ORDER:
            raise ValueError(f"max_order must lie in 0..{BESSEL_MAX_ORDER}")
        if not 0 < self.k_lo < self.k_hi:
            raise ValueError(f"need 0 < k_lo < k_hi, got ({self.k_lo}, {self.k_hi})")
        top = self.k_hi * self.radius * max(1.0, 1.0 / math.sqrt(self.a_min))
        if top > BESSEL_MAX_ARG:
            raise ValueError(f"k_hi * radius too large for the Bessel kernel ({top:.1f} > {BESSEL_MAX_ARG})")


def _determinant(radius: float, a: float, m: int, k):
    s = math.sqrt(a)
    k = np.asarray(k, dtype=float)
    ji, dji = bessel_j(m, k * radius / s)
    jo, djo = bessel_j(m, k * radius)
    return ji * djo - s * dji * jo


def determinant(problem: DiskTEProblem, m: int, k):
    """``d_m(k)``; vectorized over ``k``."""
    return _determinant(problem.radius, problem.a_min, m, k)


@dataclasses.dataclass(frozen=True)
class TEResult:
    """Roots found in the search interval.

    Attributes:
        k_min: Smallest root, or ``None`` when no root was found.
        order_of_min: Fourier order of ``k_min``.
        roots_by_order: Ascending roots for each scanned order.
        roots: All roots, ascending, merged across orders within ``1e-8``.
    """

    k_min: Optional[float]
    order_of_min: Optional[int]
    roots_by_order: Dict[int, List[float]]
    roots: List[float]

    @property
    def found(self) -> bool:
        return self.k_min is not None


def roots_for_order(problem: DiskTEProblem, m: int, step: Optional[float] = None) -> List[float]:
    """Sign-change roots of ``d_m`` on the search interval, each bisected to ``1e-10``.

    Double roots without a sign change are not detected.
    """
    step = SCAN_FRACTION * (problem.k_hi - problem.k_lo) if step is None else step
    n = int(math.ceil((problem.k_hi - problem.k_lo) / step)) + 1
    grid = np.linspace(problem.k_lo, problem.k_hi, n)
    vals = determinant(problem, m, grid)

    def f(k: float) -> float:
        return float(determinant(problem, m, k))

    return [bisect(f, grid[i], grid[i + 1], xtol=ROOT_XTOL) for i in bracket_sign_changes(vals)]


def smallest_eigenvalue(problem: DiskTEProblem, step: Optional[float] = None) -> TEResult:
    """Scans orders ``0..max_order`` and returns the smallest root with all roots found."""
    by_order = {m: roots_for_order(problem, m, step) for m in range(problem.max_order + 1)}
    merged: List[float] = []
    for k in sorted(k for roots in by_order.values() for k in roots):
        if not merged or k - merged[-1] > DEDUP_TOL:
            merged.append(k)
    if not merged:
        return TEResult(None, None, by_order, [])
    k_min = merged[0]
    order = min(m for m, roots in by_order.items() if roots and abs(roots[0] - k_min) <= DEDUP_TOL)
    return TEResult(k_min, order, by_order, merged)
