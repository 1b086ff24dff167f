"""Mode arithmetic for 2pi-periodic quasi-periodic fields.

A field that is alpha-quasi-periodic in x1 expands in the modes
``exp(i alpha_n x1)`` with ``alpha_n = alpha + n``. Above and below the layer each
mode propagates (real ``beta_n``) or decays (``beta_n`` on the positive imaginary
axis).
"""

from __future__ import annotations

import dataclasses
from typing import Tuple

import numpy as np

PLUS = "+"
MINUS = "-"
SIGNS = (PLUS, MINUS)

# Relative distance of k^2 to alpha_n^2 below which a mode is treated as grazing.
_WOOD_TOL = 1e-10


class WoodAnomalyError(ValueError):
    """Raised when some beta_n vanishes inside the requested mode band."""


def _beta_case(k: float, alpha_n: np.ndarray) -> np.ndarray:
    d = k * k - alpha_n * alpha_n
    out = np.empty(np.shape(alpha_n), dtype=complex)
    prop = d >= 0
    out[prop] = np.sqrt(d[prop])
    out[~prop] = 1j * np.sqrt(-d[~prop])
    return out


@dataclasses.dataclass(frozen=True)
class ModeSet:
    """Wave number, quasi-momentum and mode truncations of a periodic problem.

    Attributes:
        k: Wave number, positive.
        alpha: Quasi-momentum.
        m_incident: Half-band ``M`` of the incident family and measured data.
        n_dtn: Half-band of the truncated Dirichlet-to-Neumann maps, ``>= m_incident``.
        h: Half-height of the truncated cell ``(-pi, pi) x (-h, h)``.
    """

    k: float
    alpha: float = 0.0
    m_incident: int = 10
    n_dtn: int = 30
    h: float = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"wave number k must be positive, got {self.k}")
        if self.m_incident < 0:
            raise ValueError(f"m_incident must be >= 0, got {self.m_incident}")
        if self.n_dtn < self.m_incident:
            raise ValueError(
                f"n_dtn ({self.n_dtn}) must be >= m_incident ({self.m_incident})"
            )
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        an = self.alpha_n(self.n_dtn)
        gap = np.abs(self.k**2 - an**2)
        bad = gap <= _WOOD_TOL * max(1.0, self.k**2)
        if np.any(bad):
            n_bad = self.orders(self.n_dtn)[bad]
            raise WoodAnomalyError(
                f"Wood anomaly: beta_n = 0 for n = {n_bad.tolist()} "
                f"(k={self.k}, alpha={self.alpha}); shift k or alpha"
            )

    @staticmethod
    def orders(band: int) -> np.ndarray:
        return np.arange(-band, band + 1)

    def alpha_n(self, band: int | None = None) -> np.ndarray:
        band = self.n_dtn if band is None else band
        return self.alpha + self.orders(band)

    def beta_n(self, band: int | None = None) -> np.ndarray:
        return _beta_case(self.k, self.alpha_n(band))

    def propagating(self, band: int | None = None) -> np.ndarray:
        """Boolean mask of modes with ``k^2 > alpha_n^2`` over ``|n| <= band``."""
        return self.k**2 > self.alpha_n(band) ** 2

    def propagating_count(self) -> int:
        # All propagating orders satisfy |alpha + n| < k, so a band of k + |alpha| + 1 covers them.
        band = int(np.ceil(self.k + abs(self.alpha))) + 1
        return int(np.count_nonzero(self.propagating(band)))

    def evanescent_count(self, band: int | None = None) -> int:
        band = self.m_incident if band is None else band
        return int(np.count_nonzero(~self.propagating(band)))

    def with_band(self, m_incident: int | None = None, n_dtn: int | None = None) -> "ModeSet":
        return dataclasses.replace(
            self,
            m_incident=self.m_incident if m_incident is None else m_incident,
            n_dtn=self.n_dtn if n_dtn is None else n_dtn,
        )


def beta(mode_set: ModeSet, n: int) -> complex:
    """Returns beta_n, real and positive for propagating modes, else ``i*sqrt(alpha_n^2 - k^2)``."""
    if abs(n) > mode_set.n_dtn:
        raise ValueError(f"|n| = {abs(n)} exceeds n_dtn = {mode_set.n_dtn}")
    return complex(_beta_case(mode_set.k, np.array([mode_set.alpha + n], dtype=float))[0])


@dataclasses.dataclass(frozen=True)
class Weights:
    """Incident weights ``w_n^+-`` and adjoint weights ``wt_n^+-`` over a band."""

    orders: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    wt_plus: np.ndarray
    wt_minus: np.ndarray


def weights(mode_set: ModeSet, band: int | None = None) -> Weights:
    """Incident and adjoint weights over ``|n| <= band``.

    ``w+ = i, w- = 1`` (propagating) and ``w+- = exp(-i beta_n h)`` (evanescent).
    The adjoint weights are ``wt+ = exp(-i beta_n h), wt- = i exp(-i beta_n h)``
    (propagating) and ``wt+ = wt- = i`` (evanescent); with these,
    ``int (Re Q)^{1/2} f . grad conj(phi_n^s / (beta_n w_n^s))`` equals
    ``4 pi wt_n^s (u_n^+ +- u_n^-)`` for the background field driven by ``(Re Q)^{1/2} f``.
    """
    band = mode_set.m_incident if band is None else band
    b = mode_set.beta_n(band)
    prop = mode_set.propagating(band)
    damp = np.exp(-1j * b * mode_set.h)
    w_plus = np.where(prop, 1j, damp)
    w_minus = np.where(prop, 1.0 + 0j, damp)
    wt_plus = np.where(prop, damp, 1j)
    wt_minus = np.where(prop, 1j * damp, 1j)
    return Weights(ModeSet.orders(band), w_plus, w_minus, wt_plus, wt_minus)


@dataclasses.dataclass(frozen=True)
class ModeWave:
    """The single-mode field ``exp(i alpha_n x1) (p exp(-i beta_n x2) + q exp(i beta_n x2))``.

    ``p`` multiplies the downward travelling (or upward decaying) part.
    """

    n: int
    p: complex
    q: complex

    @classmethod
    def standing(cls, n: int, sign: str) -> "ModeWave":
        if sign not in SIGNS:
            raise ValueError(f"sign must be '+' or '-', got {sign!r}")
        return cls(n, 1.0, 1.0 if sign == PLUS else -1.0)

    @classmethod
    def downward(cls, n: int = 0) -> "ModeWave":
        return cls(n, 1.0, 0.0)

    @classmethod
    def upward(cls, n: int = 0) -> "ModeWave":
        return cls(n, 0.0, 1.0)

    def evaluate(self, mode_set: ModeSet, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Value and gradient at points ``x`` of shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        an = mode_set.alpha + self.n
        b = beta(mode_set, self.n)
        ph = np.exp(1j * an * x[..., 0])
        down = self.p * np.exp(-1j * b * x[..., 1])
        up = self.q * np.exp(1j * b * x[..., 1])
        value = ph * (down + up)
        grad = np.stack([1j * an * value, ph * 1j * b * (up - down)], axis=-1)
        return value, grad

    def boundary_data(self, mode_set: ModeSet) -> dict:
        """Trace and x2-derivative coefficients of the mode on ``x2 = +h`` and ``x2 = -h``."""
        b = beta(mode_set, self.n)
        h = mode_set.h
        out = {}
        for side, y in ((PLUS, h), (MINUS, -h)):
            d = self.p * np.exp(-1j * b * y)
            u = self.q * np.exp(1j * b * y)
            out[side] = (d + u, 1j * b * (u - d))
        return out


def incident_field(mode_set: ModeSet, n: int, sign: str, x) -> Tuple[np.ndarray, np.ndarray]:
    """Standing incident wave ``exp(i(alpha_n x1 - beta_n x2)) +- exp(i(alpha_n x1 + beta_n x2))``.

    Returns:
        ``(value, gradient)`` with gradient shape ``(..., 2)``.
    """
    if abs(n) > mode_set.m_incident:
        raise ValueError(f"|n| = {abs(n)} exceeds m_incident = {mode_set.m_incident}")
    return ModeWave.standing(n, sign).evaluate(mode_set, x)


def test_sequence(mode_set: ModeSet, z, band: int | None = None) -> Tuple[np.ndarray, np.ndarray]:
    """Rayleigh sequences of the quasi-periodic Green's function with source at ``z``.

    ``r_n^+(z) = i/(4 pi beta_n) exp(-i alpha_n z1 + i beta_n (h - z2))`` and
    ``r_n^-(z) = i/(4 pi beta_n) exp(-i alpha_n z1 + i beta_n (h + z2))``, so evanescent
    entries decay for ``|z2| < h``.

    Args:
        z: Points of shape ``(2,)`` or ``(npts, 2)``.
        band: Half-band of the returned sequences; defaults to ``n_dtn``.

    Returns:
        ``(r_plus, r_minus)`` of shape ``(npts, 2*band+1)`` (or ``(2*band+1,)`` for one point).
    """
    band = mode_set.n_dtn if band is None else band
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    an = mode_set.alpha_n(band)
    b = mode_set.beta_n(band)
    h = mode_set.h
    pre = 1j / (4 * np.pi * b)
    ph = np.exp(-1j * np.outer(z[:, 0], an))
    r_plus = pre * ph * np.exp(1j * np.outer(h - z[:, 1], b))
    r_minus = pre * ph * np.exp(1j * np.outer(h + z[:, 1], b))
    if single:
        return r_plus[0], r_minus[0]
    return r_plus, r_minus


def p1_factor(mode_set: ModeSet, dx: float, band: int | None = None) -> np.ndarray:
    """``sinc^2(alpha_n dx / 2)``: Fourier weight of a hat function relative to a point sample."""
    return np.sinc(mode_set.alpha_n(band) * dx / (2 * np.pi)) ** 2


def rayleigh_coefficients(trace, mode_set: ModeSet, band: int | None = None,
                          interpolation: str = "samples") -> np.ndarray:
    """Fourier coefficients ``(1/2pi) int u(x1) exp(-i alpha_n x1) dx1`` of a boundary trace.

    Args:
        trace: Samples of the trace at ``x1_j = -pi + 2 pi j / len(trace)``, one period.
        band: Half-band of the result; defaults to ``n_dtn``.
        interpolation: ``"samples"`` applies the trapezoidal rule to the samples;
            ``"p1"`` integrates the piecewise-linear interpolant exactly.

    Returns:
        Complex array ``u_hat[n + band]`` for ``|n| <= band``.
    """
    band = mode_set.n_dtn if band is None else band
    u = np.asarray(trace, dtype=complex)
    npts = u.shape[-1]
    if npts < 2 * band + 2:
        raise ValueError(
            f"trace has {npts} samples; at least {2 * band + 2} are needed for |n| <= {band}"
        )
    x = -np.pi + 2 * np.pi * np.arange(npts) / npts
    spec = np.fft.fft(u * np.exp(-1j * mode_set.alpha * x), axis=-1) / npts
    n = ModeSet.orders(band)
    # x_0 = -pi contributes the phase exp(i n pi) = (-1)^n.
    out = spec[..., n % npts] * np.where(n % 2 == 0, 1.0, -1.0)
    if interpolation == "p1":
        out = out * p1_factor(mode_set, 2 * np.pi / npts, band)
    elif interpolation != "samples":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return out


def synthesize_trace(coefficients, mode_set: ModeSet, npts: int) -> np.ndarray:
    """Inverse of :func:`rayleigh_coefficients` for band-limited sequences."""
    c = np.asarray(coefficients, dtype=complex)
    band = (c.shape[-1] - 1) // 2
    x = -np.pi + 2 * np.pi * np.arange(npts) / npts
    return np.exp(1j * np.outer(x, mode_set.alpha_n(band))) @ c


# Keep pytest from collecting this as a test when imported into a test module.
test_sequence.__test__ = False
