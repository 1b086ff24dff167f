"""Acceptance suite: one reported PASS/FAIL line per criterion."""

import json
import pathlib
import time

import numpy as np
import pytest
import scipy.optimize
import scipy.special

from conftest import record_criterion
from layerscat import cli
from layerscat import factorization as fm
from layerscat import te_disk
from layerscat.forward import ForwardProblem, energy_defect
from layerscat.geometry import REAL_TE, builtin_geometry
from layerscat.modes import ModeSet, ModeWave
from oracles import slab_rayleigh, smooth_random_field

K = 5.85
BASELINES = json.loads((pathlib.Path(__file__).parent / "baselines.json").read_text())

pytestmark = pytest.mark.acceptance


def test_criterion_01_mode_bookkeeping():
    t0 = time.perf_counter()
    prop = ModeSet(K, 0.0, 10, 30).propagating_count()
    ev10 = ModeSet(K, 0.0, 10, 30).evanescent_count()
    ev20 = ModeSet(K, 0.0, 20, 40).evanescent_count()
    dt = time.perf_counter() - t0
    ok = prop == 11 and ev10 == 10 and ev20 == 30 and dt < 1.0
    record_criterion(1, "mode bookkeeping", ok,
                     f"propagating={prop} (11), evanescent M=10: {ev10} (10), M=20: {ev20} (30), {dt:.3f}s (<1s)")
    assert ok


def _slab_errors(resolution):
    c = builtin_geometry("slab", {"half_thickness": 0.5}, q=1.0, mode=REAL_TE)
    ms = ModeSet(K, 0.0, 10, 30, c.default_h())
    s = ForwardProblem(c, ms, resolution).solve_plane_wave(ModeWave.downward(0))
    up, dn = slab_rayleigh(K, 0.0, 2.0, 0.5, ms.h)
    c0 = ms.n_dtn
    return abs(s.rayleigh.u_plus[c0] - up) / abs(up), abs(s.rayleigh.u_minus[c0] - dn) / abs(dn)


def test_criterion_02_slab_oracle():
    t0 = time.perf_counter()
    e20 = _slab_errors(20)
    e40 = _slab_errors(40)
    dt = time.perf_counter() - t0
    ratios = [a / b for a, b in zip(e20, e40)]
    # "halving (+-30%)": the doubled-resolution error is at most 0.5 * 1.3 of the coarse one
    ok_tol = max(e20) <= 1e-3
    ok_rate = all(r >= 1 / 0.65 for r in ratios)
    ok = ok_tol and ok_rate and dt < 60
    record_criterion(2, "slab forward oracle", ok,
                     f"res20 err(u+, u-)=({e20[0]:.2e}, {e20[1]:.2e}) (<=1e-3), res40=({e40[0]:.2e}, {e40[1]:.2e}), "
                     f"ratios=({ratios[0]:.2f}, {ratios[1]:.2f}) (>=1.54), {dt:.1f}s (<60s)")
    assert ok


def test_criterion_03_energy_conservation():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in ("piecewise-linear-layer", "sinusoidal-layer", "ball", "cross"):
        c = builtin_geometry(name, mode=REAL_TE)
        ms = ModeSet(K, 0.0, 10, 30, c.default_h())
        p = ForwardProblem(c, ms, 20)
        d = energy_defect(ms, p.solve_plane_wave(ModeWave.downward(0)).rayleigh)
        d_an = energy_defect(ms, p.solve_plane_wave(ModeWave.downward(0), method="analytic").rayleigh)
        ok &= d <= 1e-3
        parts.append(f"{name}={d:.1e} (analytic source {d_an:.1e})")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    record_criterion(3, "energy conservation", ok, ", ".join(parts) + f" (<=1e-3), {dt:.1f}s (<300s)")
    assert ok


def _adjoint_errors(resolution, seed=2024):
    c = builtin_geometry("ball")
    ms = ModeSet(K, 0.0, 4, 30, c.default_h())
    ops = fm.ImagingOperators(ForwardProblem(c, ms, resolution))
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(5):
        a = rng.normal(size=18) + 1j * rng.normal(size=18)
        f = smooth_random_field(rng, ops.points)
        lhs = ops.inner(ops.apply_H(a), f)
        rhs = np.vdot(ops.apply_Hstar(f), a)
        errs.append(abs(lhs - rhs) / abs(lhs))
    return errs


def test_criterion_04_adjoint_identity():
    t0 = time.perf_counter()
    e20 = _adjoint_errors(20)
    e40 = _adjoint_errors(40)
    dt = time.perf_counter() - t0
    ok = max(e20) <= 1e-2 and max(e40) < max(e20) and dt < 120
    record_criterion(4, "adjoint identity", ok,
                     f"res20 max rel err={max(e20):.2e} (<=1e-2), res40={max(e40):.2e} (decreasing), {dt:.1f}s (<120s)")
    assert ok


def _factorization_errors(resolution, seed=7):
    c = builtin_geometry("ball")
    ms = ModeSet(K, 0.0, 4, 30, c.default_h())
    p = ForwardProblem(c, ms, resolution)
    ops = fm.ImagingOperators(p)
    wn = fm.assemble_near_field(p).weighted()
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(3):
        a = rng.normal(size=18) + 1j * rng.normal(size=18)
        lhs = wn @ a
        errs.append(np.linalg.norm(lhs - ops.apply_Hstar(ops.apply_T(ops.apply_H(a)))) / np.linalg.norm(lhs))
    return errs


def test_criterion_05_factorization_identity():
    t0 = time.perf_counter()
    e20 = _factorization_errors(20)
    e40 = _factorization_errors(40)
    dt = time.perf_counter() - t0
    ok = max(e20) <= 5e-2 and max(e40) < max(e20) and dt < 300
    record_criterion(5, "factorization identity", ok,
                     f"res20 max rel err={max(e20):.2e} (<=5e-2), res40={max(e40):.2e} (decreasing), {dt:.1f}s (<300s)")
    assert ok


def test_criterion_06_sharp_positivity():
    parts, ok = [], True
    for name in ("ball", "cross", "piecewise-linear-layer", "sinusoidal-layer"):
        c = builtin_geometry(name)
        ms = ModeSet(K, 0.0, 10, 30, c.default_h())
        near = fm.assemble_near_field(ForwardProblem(c, ms, 15))
        t0 = time.perf_counter()
        spec = fm.sharp_spectrum(near.weighted())
        dt = time.perf_counter() - t0
        good = spec.raw_min >= -1e-8 * spec.raw_max and dt < 60
        ok &= good
        parts.append(f"{name}: min/max={spec.raw_min / spec.raw_max:.1e}")
    record_criterion(6, "(WN)# positivity", ok, ", ".join(parts) + " (>= -1e-8)")
    assert ok


def _image(tmp_path, name, extra=()):
    out = tmp_path / name
    t0 = time.perf_counter()
    assert cli.main(["image", "--out", str(out), *extra]) == 0
    dt = time.perf_counter() - t0
    return json.loads((out / "metadata.json").read_text()), dt


def test_criterion_07_imaging_sanity(tmp_path):
    meta, dt = _image(tmp_path, "ball")
    base = BASELINES["imaging_ball_clean"]["best_jaccard"]
    ratio = meta["inside_outside_ratio"]
    best = meta["best_jaccard"]
    ok = ratio >= 2 and best >= 0.95 * base and dt <= 900
    record_criterion(7, "imaging sanity (ball)", ok,
                     f"inside/outside={ratio:.2f} (>=2), best Jaccard={best:.4f} at tau={meta['best_tau']} "
                     f"(>= 0.95 x baseline {base:.4f}), {dt:.1f}s (<=900s)")
    assert ok


def test_criterion_08_noise_protocol(tmp_path):
    parts, ok = [], True
    for geom in ("ball", "cross"):
        clean, _ = _image(tmp_path, f"{geom}-clean", ["--geometry", geom])
        noisy, _ = _image(tmp_path, f"{geom}-noisy", ["--geometry", geom, "--delta", "0.05", "--seed", "0"])
        rel = noisy["noise_relative_frobenius"]
        frac = noisy["best_jaccard"] / clean["best_jaccard"]
        ok &= abs(rel - 0.05) <= 1e-12 and frac > 0.8 and noisy["noise"] == "5%"
        parts.append(f"{geom}: ||E||/||N||={rel:.15f}, Jaccard noisy/clean="
                     f"{noisy['best_jaccard']:.3f}/{clean['best_jaccard']:.3f}={frac:.3f}")
    record_criterion(8, "noise protocol", ok, "; ".join(parts) + " (exactly 0.05; >0.8)")
    assert ok


def _oracle_smallest_root(a, eps, k_lo=0.05, k_hi=15.0, orders=16):
    def d(m, k):
        s = np.sqrt(a)
        return (scipy.special.jv(m, k * eps / s) * scipy.special.jvp(m, k * eps)
                - s * scipy.special.jvp(m, k * eps / s) * scipy.special.jv(m, k * eps))

    grid = np.arange(k_lo, k_hi + 1e-12, 1e-3)
    best = np.inf
    for m in range(orders):
        v = d(m, grid)
        idx = np.flatnonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)
        if idx.size:
            best = min(best, scipy.optimize.brentq(lambda k: d(m, k), grid[idx[0]], grid[idx[0] + 1], xtol=1e-14))
    return best


def test_criterion_09_disk_transmission_eigenvalues():
    t0 = time.perf_counter()
    grid = np.linspace(0.05, 15, 2000)
    trivial = max(np.max(np.abs(te_disk._determinant(1.0, 1.0, m, grid))) for m in range(16))
    k1 = te_disk.smallest_eigenvalue(te_disk.DiskTEProblem(1.0, 4.0)).k_min
    oracle = _oracle_smallest_root(4.0, 1.0)
    scale_err = max(
        abs(te_disk.smallest_eigenvalue(te_disk.DiskTEProblem(rho, 4.0, k_lo=0.05 / rho, k_hi=15 / rho)).k_min
            - k1 / rho)
        for rho in (0.5, 2.0)
    )
    dt = time.perf_counter() - t0
    ok = trivial <= 1e-12 and abs(k1 - oracle) <= 1e-8 and scale_err <= 1e-8 and dt < 10
    record_criterion(9, "disk transmission eigenvalues", ok,
                     f"|d| at a=1: {trivial:.1e} (<=1e-12), k_eps={k1:.12f} vs oracle {oracle:.12f} "
                     f"(diff {abs(k1 - oracle):.1e} <=1e-8), scaling err={scale_err:.1e} (<=1e-8), {dt:.1f}s (<10s)")
    assert ok


def test_criterion_10_determinism(tmp_path):
    runs = {
        "image": (["image", "--geometry", "cross", "--delta", "0.05", "--seed", "11"], ["indicator.csv"]),
        "solve": (["solve", "--geometry", "sinusoidal-layer", "--export-field", "true"], ["rayleigh.csv", "field.csv"]),
        "te-disk": (["te-disk"], ["roots.csv"]),
    }
    same, parts = True, []
    for name, (args, files) in runs.items():
        for rep in (1, 2):
            assert cli.main(args + ["--out", str(tmp_path / f"{name}{rep}")]) == 0
        for f in files:
            eq = (tmp_path / f"{name}1" / f).read_bytes() == (tmp_path / f"{name}2" / f).read_bytes()
            same &= eq
            parts.append(f"{name}/{f}={'identical' if eq else 'DIFFERENT'}")
    record_criterion(10, "determinism", same, ", ".join(parts))
    assert same
