"""Factorization-method imaging from near-field Rayleigh data.

Sequences over the band ``|n| <= M`` are stored stacked: entries ``0..2M`` hold the
``+`` part (above the layer) and entries ``2M+1..4M+1`` the ``-`` part, each ordered
by ``n = -M..M``. Vector fields on the support ``D`` are arrays of shape ``(nD, 2)``
holding one value per support element of the forward mesh.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np

from layerscat import modes
from layerscat.forward import ForwardProblem
from layerscat.modes import MINUS, PLUS, ModeSet, ModeWave
from layerscat.numerics import hermitian_eig, sqrt_spd_2x2

log = logging.getLogger(__name__)

DEFAULT_TRUNCATION = 5e-4
PSD_TOLERANCE = 1e-8


def _band_of(seq: np.ndarray) -> int:
    size = np.shape(seq)[0]
    if size % 2 or (size // 2) % 2 == 0:
        raise ValueError(f"stacked sequence length {size} is not 2(2M+1)")
    return (size // 2 - 1) // 2


# ---------------------------------------------------------------------------
# The mode-coupling operator W
# ---------------------------------------------------------------------------


def w_matrix(mode_set: ModeSet, band: Optional[int] = None) -> np.ndarray:
    """Dense ``W``: per mode ``4 pi [[wt+, wt+], [wt-, -wt-]]`` in the stacked layout."""
    band = mode_set.m_incident if band is None else band
    w = modes.weights(mode_set, band)
    p, m = np.diag(4 * np.pi * w.wt_plus), np.diag(4 * np.pi * w.wt_minus)
    return np.block([[p, p], [m, -m]])


def apply_W(mode_set: ModeSet, seq: np.ndarray) -> np.ndarray:
    """Applies ``W`` to stacked sequences (columns allowed)."""
    seq = np.asarray(seq, dtype=complex)
    band = _band_of(seq)
    w = modes.weights(mode_set, band)
    size = 2 * band + 1
    a, b = seq[:size], seq[size:]
    shape = (-1,) + (1,) * (seq.ndim - 1)
    wp = (4 * np.pi * w.wt_plus).reshape(shape)
    wm = (4 * np.pi * w.wt_minus).reshape(shape)
    return np.concatenate([wp * (a + b), wm * (a - b)])


def apply_W_inverse(mode_set: ModeSet, seq: np.ndarray) -> np.ndarray:
    """Inverse of :func:`apply_W`, mode by mode."""
    seq = np.asarray(seq, dtype=complex)
    band = _band_of(seq)
    w = modes.weights(mode_set, band)
    size = 2 * band + 1
    c, d = seq[:size], seq[size:]
    shape = (-1,) + (1,) * (seq.ndim - 1)
    cp = c / (4 * np.pi * w.wt_plus).reshape(shape)
    dm = d / (4 * np.pi * w.wt_minus).reshape(shape)
    return np.concatenate([0.5 * (cp + dm), 0.5 * (cp - dm)])


# ---------------------------------------------------------------------------
# H, H*, T on the discrete support
# ---------------------------------------------------------------------------


class ImagingOperators:
    """``H``, ``H*`` and ``T`` for an absorbing contrast, discretized on a forward mesh.

    ``H`` is evaluated from the analytic incident fields; ``H*`` and ``T`` use finite
    element solves. Inner products on ``D`` use one point per support element.
    """

    def __init__(self, problem: ForwardProblem):
        self.problem = problem
        self.mode_set = problem.mode_set
        q = problem.contrast.q_matrix
        self.q = q
        self.root, self.root_inv = sqrt_spd_2x2(q.real)
        self.support = problem.support
        self.points = problem.mesh.centroids[self.support]
        self.areas = problem.mesh.areas[self.support]

    @property
    def band(self) -> int:
        return self.mode_set.m_incident

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """``int_D f . conj(g)``."""
        return complex(np.sum(self.areas[:, None] * f * np.conj(g)))

    def _to_mesh(self, f: np.ndarray) -> np.ndarray:
        g = np.zeros((self.problem.mesh.n_elements, 2), dtype=complex)
        g[self.support] = f
        return g

    def incident_gradients(self, points: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradients of ``phi_n^s / (beta_n w_n^s)``, shape ``(2(2M+1), npts, 2)`` in stacked order."""
        pts = self.points if points is None else points
        ms = self.mode_set
        w = modes.weights(ms, self.band)
        b = ms.beta_n(self.band)
        out = []
        for sign, ws in ((PLUS, w.w_plus), (MINUS, w.w_minus)):
            for j, n in enumerate(ModeSet.orders(self.band)):
                _, grad = ModeWave.standing(int(n), sign).evaluate(ms, pts)
                out.append(grad / (b[j] * ws[j]))
        return np.array(out)

    @property
    def edge_midpoints(self) -> np.ndarray:
        """Edge midpoints of the support elements, shape ``(3, nD, 2)``."""
        v = self.problem.mesh.nodes[self.problem.mesh.triangles[self.support]]
        return 0.5 * np.stack([v[:, 0] + v[:, 1], v[:, 1] + v[:, 2], v[:, 2] + v[:, 0]])

    def apply_H(self, a: np.ndarray, points: Optional[np.ndarray] = None) -> np.ndarray:
        """``(Re Q)^{1/2} sum_{s,n} a_n^s grad(phi_n^s) / (beta_n w_n^s)``, shape ``(npts, 2)``.

        Without ``points`` this returns the element averages over the support (its L2
        projection onto piecewise constants), integrated with the edge-midpoint rule.
        """
        a = np.asarray(a, dtype=complex)
        if points is None:
            mids = self.edge_midpoints
            grads = np.mean([self.incident_gradients(m) for m in mids], axis=0)
        else:
            grads = self.incident_gradients(points)
        field = np.tensordot(a, grads, axes=(0, 0))
        return field @ self.root.T

    def apply_Hstar(self, f: np.ndarray) -> np.ndarray:
        """``W`` applied to the Rayleigh data of the background field driven by ``(Re Q)^{1/2} f``."""
        f = np.asarray(f, dtype=complex)
        sol = self.problem.solve_source(self._to_mesh(f @ self.root.T), source_sign=1, background=True)
        return apply_W(self.mode_set, sol.rayleigh.restrict(self.band).stacked())

    def apply_T(self, f: np.ndarray) -> np.ndarray:
        """``R^{-1} Q (R^{-1} f + grad u)`` with ``B(u, v; A) = -int Q R^{-1} f . grad conj(v)``, ``R = (Re Q)^{1/2}``."""
        f = np.asarray(f, dtype=complex)
        g = (f @ self.root_inv.T) @ self.q.T
        sol = self.problem.solve_source(self._to_mesh(g), source_sign=-1)
        grad_u = self.problem.gradients(sol.field)[self.support]
        return ((f @ self.root_inv.T + grad_u) @ self.q.T) @ self.root_inv.T


# ---------------------------------------------------------------------------
# Near-field operator
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class NearFieldOperator:
    """Near-field matrix in the stacked layout.

    Column ``(s, n)`` holds the stacked Rayleigh data, over ``|j| <= M``, of the field
    solving ``B(u, v; A) = int Q grad(phi_n^s / (beta_n w_n^s)) . grad conj(v)``. This is
    the scattered field of that incident wave with the opposite sign, the convention under
    which ``W N = H* T H`` holds and ``(W N)#`` is positive semi-definite.
    """

    matrix: np.ndarray
    mode_set: ModeSet

    @property
    def band(self) -> int:
        return self.mode_set.m_incident

    def weighted(self) -> np.ndarray:
        return apply_W(self.mode_set, self.matrix)


def adjoint_incidents(problem: ForwardProblem, band: Optional[int] = None) -> np.ndarray:
    """Discrete incident fields whose gradients realize the exact adjoint of the discrete ``H*``.

    Column ``(s, n)`` solves ``B(z, v; I)^H``-systems driven by the ``(s, n)`` row of
    ``W`` composed with Rayleigh extraction, so ``z`` is the Galerkin projection of
    ``phi_n^s / (beta_n w_n^s)``.
    """
    band = problem.mode_set.m_incident if band is None else band
    extract = problem.extraction_matrix(band)
    lmat = w_matrix(problem.mode_set, band) @ extract
    return problem.factorization(background=True).solve(lmat.conj().T, trans="H")


def assemble_near_field(problem: ForwardProblem, incident: str = "projected") -> NearFieldOperator:
    """Builds the near-field matrix with one forward solve per incident ``(s, n)``.

    Args:
        incident: ``"projected"`` uses :func:`adjoint_incidents`; ``"analytic"`` uses the
            exact incident gradients at element centroids.
    """
    ms = problem.mode_set
    band = ms.m_incident
    if problem.contrast.is_zero:
        size = 2 * (2 * band + 1)
        return NearFieldOperator(np.zeros((size, size), dtype=complex), ms)
    if incident == "projected":
        z = adjoint_incidents(problem, band)
        grads = np.stack([problem.gradients(z[:, j]) for j in range(z.shape[1])], axis=-1)
    elif incident == "analytic":
        ops = ImagingOperators(problem)
        g = ops.incident_gradients(problem.mesh.centroids)
        grads = np.moveaxis(g, 0, -1)
    else:
        raise ValueError(f"unknown incident {incident!r}")
    sources = np.einsum("eij,ejc->eic", problem.q_elem, grads)
    sols = problem.solve_source(sources, source_sign=1)
    cols = [s.rayleigh.restrict(band).stacked() for s in sols]
    mat = np.column_stack(cols)
    if not np.all(np.isfinite(mat)):
        raise FloatingPointError("near-field matrix has non-finite entries")
    return NearFieldOperator(mat, ms)


def add_noise(near: NearFieldOperator, delta: float, seed: int = 0) -> NearFieldOperator:
    """Adds ``delta ||N||_F / ||E||_F E`` with ``E = U(0,1) + i U(0,1)`` entrywise."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return near
    rng = np.random.default_rng(seed)
    shape = near.matrix.shape
    e = rng.uniform(0.0, 1.0, shape) + 1j * rng.uniform(0.0, 1.0, shape)
    scale = delta * np.linalg.norm(near.matrix) / np.linalg.norm(e)
    return NearFieldOperator(near.matrix + scale * e, near.mode_set)


# ---------------------------------------------------------------------------
# Spectral data and the indicator
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SharpSpectrum:
    """Retained eigenpairs of ``(W N)#`` in descending order.

    Attributes:
        values: Retained eigenvalues (clamped to be non-negative).
        vectors: Matching orthonormal eigenvectors as columns.
        raw_min: Smallest eigenvalue before clamping.
        raw_max: Largest eigenvalue.
        truncation: Eigenvalues below this were dropped.
    """

    values: np.ndarray
    vectors: np.ndarray
    raw_min: float
    raw_max: float
    truncation: float

    @property
    def psd_defect(self) -> float:
        """``-raw_min / raw_max`` when negative eigenvalues occur, else 0."""
        if self.raw_max <= 0:
            return 0.0 if self.raw_min >= 0 else np.inf
        return max(0.0, -self.raw_min / self.raw_max)

    @property
    def empty(self) -> bool:
        return self.values.size == 0


def sharp_matrix(b: np.ndarray) -> np.ndarray:
    """``|Re B| - Im B`` with ``Re B = (B + B^H)/2`` and ``Im B = (B - B^H)/(2i)``."""
    b = np.asarray(b, dtype=complex)
    re = 0.5 * (b + b.conj().T)
    im = (b - b.conj().T) / 2j
    eig = hermitian_eig(re)
    abs_re = (eig.vectors * np.abs(eig.values)) @ eig.vectors.conj().T
    s = abs_re - im
    return 0.5 * (s + s.conj().T)


def sharp_spectrum(b: np.ndarray, truncation: float = DEFAULT_TRUNCATION) -> SharpSpectrum:
    """Eigen-decomposes ``(B)#`` and keeps eigenpairs with ``lambda >= truncation``."""
    if truncation <= 0:
        raise ValueError(f"truncation must be positive, got {truncation}")
    eig = hermitian_eig(sharp_matrix(b))
    vals = eig.values[::-1]
    vecs = eig.vectors[:, ::-1]
    raw_min = float(vals[-1]) if vals.size else 0.0
    raw_max = float(vals[0]) if vals.size else 0.0
    if raw_max > 0 and raw_min < -PSD_TOLERANCE * raw_max:
        log.warning("(WN)# has eigenvalue %.3e below -%.0e * max %.3e", raw_min, PSD_TOLERANCE, raw_max)
    vals = np.clip(vals, 0.0, None)
    keep = vals >= truncation
    return SharpSpectrum(vals[keep], vecs[:, keep], raw_min, raw_max, truncation)


@dataclasses.dataclass(frozen=True)
class IndicatorMap:
    """Indicator samples on a cell-centred grid.

    Attributes:
        x1: Grid abscissae, shape ``(n1,)``.
        x2: Grid ordinates (ascending), shape ``(n2,)``.
        values: ``I(z)`` with shape ``(n2, n1)``, normalized to max 1 (all zero if empty).
        zero_series: Number of grid points where the Picard series vanished.
    """

    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray
    zero_series: int = 0

    @property
    def points(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.x1, self.x2, indexing="xy")
        return np.stack([xx, yy], axis=-1)

    def table(self) -> np.ndarray:
        """Rows ``(x1, x2, I)``, ``x1`` fastest."""
        p = self.points.reshape(-1, 2)
        return np.column_stack([p, self.values.ravel()])


def sampling_grid(n1: int, n2: int, h: float):
    """Cell-centred grid over ``(-pi, pi) x (-h, h)``."""
    if n1 < 1 or n2 < 1:
        raise ValueError("grid dimensions must be positive")
    x1 = -np.pi + (np.arange(n1) + 0.5) * 2 * np.pi / n1
    x2 = -h + (np.arange(n2) + 0.5) * 2 * h / n2
    return x1, x2


def picard_indicator(spectrum: SharpSpectrum, mode_set: ModeSet, x1: np.ndarray, x2: np.ndarray
                     ) -> IndicatorMap:
    """``I(z) = 1 / sum_j |<W r(z), psi_j>|^2 / lambda_j`` on the tensor grid ``x1 x x2``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    shape = (x2.size, x1.size)
    if spectrum.empty:
        log.warning("empty spectrum: no eigenvalue of (WN)# above truncation %.1e", spectrum.truncation)
        return IndicatorMap(x1, x2, np.zeros(shape))
    band = _band_of(spectrum.vectors)
    xx, yy = np.meshgrid(x1, x2, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    r_plus, r_minus = modes.test_sequence(mode_set, pts, band=band)
    tests = apply_W(mode_set, np.concatenate([r_plus, r_minus], axis=1).T)
    proj = spectrum.vectors.conj().T @ tests
    series = np.sum(np.abs(proj) ** 2 / spectrum.values[:, None], axis=0)
    zero = series == 0
    vals = np.zeros_like(series)
    vals[~zero] = 1.0 / series[~zero]
    peak = vals.max()
    if peak > 0:
        vals = vals / peak
    return IndicatorMap(x1, x2, vals.reshape(shape), int(np.count_nonzero(zero)))


def jaccard(indicator: IndicatorMap, truth: np.ndarray, tau: float) -> float:
    """Jaccard index of ``{I >= tau max I}`` against a boolean truth mask on the same grid."""
    truth = np.asarray(truth, dtype=bool)
    vals = indicator.values
    recon = vals >= tau * vals.max() if vals.max() > 0 else np.zeros_like(truth)
    union = np.count_nonzero(recon | truth)
    return float(np.count_nonzero(recon & truth) / union) if union else 1.0


def contrast_ratio(indicator: IndicatorMap, truth: np.ndarray) -> float:
    """Mean indicator inside the truth mask over the mean outside."""
    truth = np.asarray(truth, dtype=bool)
    inside = indicator.values[truth].mean()
    outside = indicator.values[~truth].mean()
    return float(inside / outside) if outside > 0 else np.inf
