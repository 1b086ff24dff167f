"""Small numerical kernels used by the solvers.

Dense Hermitian eigensolves and sparse LU are delegated to LAPACK (numpy) and
SuperLU (scipy) behind thin wrappers that add the determinism and accuracy checks
the pipeline relies on. Bessel functions and root bracketing are implemented here.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, List, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularSystemError(RuntimeError):
    """Raised when a sparse factorization or solve fails to reach tolerance."""


# ---------------------------------------------------------------------------
# Dense Hermitian eigenproblems
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class HermitianEigenSystem:
    """Eigenvalues in ascending order with orthonormal eigenvectors as columns."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    # First component with non-negligible modulus becomes real positive.
    v = vectors.copy()
    tol = 1e-8 / np.sqrt(max(v.shape[0], 1))
    for j in range(v.shape[1]):
        col = v[:, j]
        idx = np.flatnonzero(np.abs(col) > tol)
        if idx.size:
            c = col[idx[0]]
            v[:, j] = col * (abs(c) / c)
    return v


def hermitian_eig(matrix) -> HermitianEigenSystem:
    """Full eigendecomposition of a dense Hermitian matrix.

    The input is symmetrized when its anti-Hermitian part exceeds ``1e-12 * ||A||``.
    Eigenvectors are phase-normalized so results are reproducible.
    """
    a = np.asarray(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.shape[0] == 0:
        return HermitianEigenSystem(np.zeros(0), np.zeros((0, 0), dtype=complex))
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.conj().T) > 1e-12 * scale:
        a = 0.5 * (a + a.conj().T)
    values, vectors = np.linalg.eigh(a)
    return HermitianEigenSystem(values, _fix_phases(vectors))


# ---------------------------------------------------------------------------
# 2x2 SPD square roots
# ---------------------------------------------------------------------------


def sqrt_spd_2x2(matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Principal square root ``S`` of a real symmetric positive definite 2x2 matrix.

    Uses ``S = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A))``.

    Returns:
        ``(S, S_inv)``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {a.shape}")
    if abs(a[0, 1] - a[1, 0]) > 1e-14 * max(1.0, np.abs(a).max()):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] ** 2
    disc = math.sqrt(max(0.25 * tr * tr - det, 0.0))
    if 0.5 * tr - disc <= 0:
        raise ValueError(f"matrix is not positive definite: eigenvalues {0.5*tr-disc}, {0.5*tr+disc}")
    s = math.sqrt(det)
    t = math.sqrt(tr + 2 * s)
    root = (a + s * np.eye(2)) / t
    inv = np.array([[root[1, 1], -root[0, 1]], [-root[1, 0], root[0, 0]]]) / (
        root[0, 0] * root[1, 1] - root[0, 1] * root[1, 0]
    )
    return root, inv


# ---------------------------------------------------------------------------
# Bessel functions of the first kind
# ---------------------------------------------------------------------------

BESSEL_MAX_ORDER = 50
BESSEL_MAX_ARG = 200.0
_SERIES_LIMIT = 1.0
_BIG = 1e250


def _bessel_series(m_max: int, x: np.ndarray) -> np.ndarray:
    """Power series for ``J_0..J_m_max`` at small arguments."""
    out = np.zeros((m_max + 1, x.size))
    half = 0.5 * x
    q = -half * half
    for m in range(m_max + 1):
        term = half**m / math.factorial(m)
        total = term.copy()
        for s in range(1, 40):
            term = term * q / (s * (s + m))
            total += term
        out[m] = total
    return out


def _bessel_miller(m_max: int, x: np.ndarray) -> np.ndarray:
    """Backward recurrence normalized by ``J_0 + 2 sum J_2k = 1``."""
    xm = float(np.max(x))
    start = max(m_max, int(xm)) + 20 + int(math.sqrt(40.0 * max(m_max, xm, 1.0)))
    start += start % 2
    out = np.zeros((m_max + 1, x.size))
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    for n in range(start, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if n - 1 <= m_max:
            out[n - 1] = j_cur
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
        big = np.abs(j_cur) > _BIG
        if np.any(big):
            f = np.where(big, 1.0 / _BIG, 1.0)
            j_cur *= f
            j_next *= f
            norm *= f
            out *= f
    norm += j_cur
    return out / norm


def bessel_j_all(m_max: int, x) -> np.ndarray:
    """``J_m(x)`` for ``m = 0..m_max`` and every entry of ``x``.

    Returns:
        Array of shape ``(m_max + 1,) + shape(x)``.
    """
    x = np.asarray(x, dtype=float)
    if not 0 <= m_max <= BESSEL_MAX_ORDER + 1:
        raise ValueError(f"order {m_max} outside supported range 0..{BESSEL_MAX_ORDER}")
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > BESSEL_MAX_ARG):
        raise ValueError(f"argument outside supported range [0, {BESSEL_MAX_ARG}]")
    flat = x.ravel()
    out = np.zeros((m_max + 1, flat.size))
    small = flat <= _SERIES_LIMIT
    if np.any(small):
        out[:, small] = _bessel_series(m_max, flat[small])
    if np.any(~small):
        out[:, ~small] = _bessel_miller(m_max, flat[~small])
    return out.reshape((m_max + 1,) + x.shape)


def bessel_j(m: int, x) -> Tuple[np.ndarray, np.ndarray]:
    """``J_m(x)`` and ``J_m'(x) = (J_{m-1}(x) - J_{m+1}(x)) / 2`` (with ``J_0' = -J_1``).

    Supported range is ``0 <= m <= 50`` and ``0 <= x <= 200``; absolute error is below
    ``1e-10`` there.
    """
    if int(m) != m or not 0 <= m <= BESSEL_MAX_ORDER:
        raise ValueError(f"order {m} outside supported range 0..{BESSEL_MAX_ORDER}")
    m = int(m)
    table = bessel_j_all(m + 1, x)
    jm = table[m]
    jp = -table[1] if m == 0 else 0.5 * (table[m - 1] - table[m + 1])
    return jm, jp


# ---------------------------------------------------------------------------
# Sparse complex linear systems
# ---------------------------------------------------------------------------


class SparseFactorization:
    """LU factorization of a sparse complex matrix, reusable across right-hand sides.

    Every solve is checked against ``||A x - b|| <= rtol * ||b||``.
    """

    def __init__(self, matrix, rtol: float = 1e-8):
        a = sp.csc_matrix(matrix, dtype=complex)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a.data)):
            raise ValueError("matrix has non-finite entries")
        self.matrix = a
        self.rtol = rtol
        try:
            self._lu = spla.splu(a, permc_spec="COLAMD")
        except RuntimeError as exc:
            diag = np.abs(a.diagonal())
            raise SingularSystemError(
                f"sparse LU failed ({exc}); n={a.shape[0]}, "
                f"min |diag|={diag.min():.3e}, max |diag|={diag.max():.3e}"
            ) from exc
        u_diag = np.abs(self._lu.U.diagonal())
        self.pivot_ratio = float(u_diag.min() / u_diag.max()) if u_diag.size else 1.0

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, rhs, trans: str = "N") -> np.ndarray:
        """Solves ``A x = b`` (``trans="N"``) or ``A^H x = b`` (``trans="H"``)."""
        b = np.asarray(rhs, dtype=complex)
        x = self._lu.solve(b, trans=trans)
        op = self.matrix if trans == "N" else self.matrix.conj().T
        res = op @ x - b
        bn = np.linalg.norm(b, axis=0)
        rn = np.linalg.norm(res, axis=0)
        bad = rn > self.rtol * np.maximum(bn, np.finfo(float).tiny)
        if np.any(bad & (bn > 0)) or not np.all(np.isfinite(x)):
            raise SingularSystemError(
                f"solve residual {float(np.max(rn / np.maximum(bn, 1e-300))):.3e} exceeds "
                f"{self.rtol:.1e}; pivot ratio {self.pivot_ratio:.3e}"
            )
        return x


def sparse_solve(matrix, rhs, rtol: float = 1e-8) -> np.ndarray:
    """One-shot sparse solve with residual check."""
    return SparseFactorization(matrix, rtol=rtol).solve(rhs)


# ---------------------------------------------------------------------------
# Root bracketing
# ---------------------------------------------------------------------------


def bracket_sign_changes(values: np.ndarray) -> np.ndarray:
    """Indices ``i`` with a strict sign change (or an exact zero) between samples ``i`` and ``i+1``."""
    v = np.asarray(values, dtype=float)
    s = np.sign(v)
    return np.flatnonzero((s[:-1] * s[1:] < 0) | ((s[:-1] == 0) & (s[1:] != 0)))


def bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-10,
           max_iter: int = 200) -> float:
    """Bisection on a bracket ``[lo, hi]`` with ``f(lo) * f(hi) <= 0``."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo <= xtol:
            return mid
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def scan_roots(f_vec: Callable[[np.ndarray], np.ndarray], f: Callable[[float], float],
               grid: np.ndarray, xtol: float = 1e-10) -> List[float]:
    """Brackets sign changes of ``f_vec`` on ``grid`` and bisects each one."""
    vals = f_vec(grid)
    return [bisect(f, grid[i], grid[i + 1], xtol=xtol) for i in bracket_sign_changes(vals)]
