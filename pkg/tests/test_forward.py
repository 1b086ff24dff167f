import numpy as np
import pytest

from layerscat import modes
from layerscat.forward import (MIN_RESOLUTION, ForwardProblem, QuasiPeriodicMesh, assemble_system, build_mesh,
                               energy_defect, fitted_levels, trace_vectors)
from layerscat.geometry import REAL_TE, builtin_geometry
from layerscat.modes import MINUS, PLUS, ModeSet, ModeWave
from layerscat.numerics import sparse_solve
from oracles import slab_rayleigh

K = 5.85


@pytest.fixture(scope="module")
def ball_problem():
    c = builtin_geometry("ball")
    return ForwardProblem(c, ModeSet(K, 0.0, 4, 30, c.default_h()), 15)


def test_mesh_counts():
    mesh = QuasiPeriodicMesh(16, 6, 1.0, 0.0)
    assert mesh.ndof == 16 * 7
    assert mesh.n_nodes == 17 * 7
    assert mesh.n_elements == 2 * 16 * 6
    assert np.isclose(mesh.areas.sum(), 2 * np.pi * 2.0)


def test_element_size_meets_resolution():
    ms = ModeSet(K, 0.0, 4, 30, 1.0)
    mesh = build_mesh(ms, MIN_RESOLUTION)
    assert mesh.diameter <= 2 * np.pi / K / MIN_RESOLUTION + 1e-12
    assert mesh.diameter <= 0.1074
    with pytest.raises(ValueError):
        build_mesh(ms, MIN_RESOLUTION - 1)


def test_mesh_resolves_dtn_band():
    ms = ModeSet(0.5, 0.1, 1, 60, 1.0)
    assert build_mesh(ms, 10).nx >= 2 * 60 + 2


def test_fitted_levels_contain_interfaces():
    lv = fitted_levels(1.0, (-0.37, 0.21), 0.05)
    assert np.isclose(lv, -0.37).any() and np.isclose(lv, 0.21).any()
    assert np.all(np.diff(lv) <= 0.05 + 1e-12) and lv[0] == -1.0 and lv[-1] == 1.0


def test_trace_vector_is_hat_integral_at_zero_alpha():
    ms = ModeSet(K, 0.0, 2, 10, 1.0)
    mesh = QuasiPeriodicMesh(32, 4, 1.0, 0.0)
    t = trace_vectors(mesh, ms)
    assert np.allclose(t[10], mesh.dx)


def test_quasi_periodic_phase():
    mesh = QuasiPeriodicMesh(8, 2, 1.0, 0.3)
    u = np.arange(mesh.ndof, dtype=complex) + 1
    un = mesh.node_values(u).reshape(3, 9)
    assert np.allclose(un[:, 8], np.exp(2j * np.pi * 0.3) * un[:, 0])


def test_zero_contrast_matches_background():
    c = builtin_geometry("ball", q=0.0)
    ms = ModeSet(K, 0.0, 2, 30, 1.25)
    p = ForwardProblem(c, ms, 12)
    a = assemble_system(p.mesh, c, ms)
    b = assemble_system(p.mesh, None, ms)
    assert abs(a - b).max() == 0
    s = p.solve_incident(0, PLUS)
    assert np.all(s.field == 0)


def test_zero_source_gives_zero(ball_problem):
    s = ball_problem.solve_source(np.zeros((ball_problem.mesh.n_elements, 2)))
    assert np.all(s.field == 0)


def test_linearity(ball_problem, rng):
    ne = ball_problem.mesh.n_elements
    g1 = rng.normal(size=(ne, 2)) + 0j
    g2 = rng.normal(size=(ne, 2)) + 0j
    u1 = ball_problem.solve_source(g1).field
    u2 = ball_problem.solve_source(g2).field
    u12 = ball_problem.solve_source(2 * g1 - 3j * g2).field
    assert np.allclose(u12, 2 * u1 - 3j * u2, atol=1e-10 * np.abs(u12).max())


def test_batched_sources_match_single(ball_problem, rng):
    ne = ball_problem.mesh.n_elements
    g = rng.normal(size=(ne, 2, 3)) + 0j
    sols = ball_problem.solve_source(g)
    for j in range(3):
        assert np.allclose(sols[j].field, ball_problem.solve_source(g[..., j]).field)


def test_slab_reflection_matches_transfer_matrix():
    c = builtin_geometry("slab", {"half_thickness": 0.5}, q=1.0, mode=REAL_TE)
    ms = ModeSet(K, 0.0, 4, 30, c.default_h())
    s = ForwardProblem(c, ms, 20).solve_plane_wave(ModeWave.downward(0))
    up, dn = slab_rayleigh(K, 0.0, 2.0, 0.5, ms.h)
    assert abs(s.rayleigh.u_plus[30] - up) <= 1e-2 * abs(up)
    assert abs(s.rayleigh.u_minus[30] - dn) <= 1e-2 * abs(dn)
    # a flat slab does not couple modes
    others = np.delete(np.abs(s.rayleigh.u_plus), 30)
    assert others.max() < 1e-10


def test_energy_conserved_for_real_contrast():
    c = builtin_geometry("cross", mode=REAL_TE)
    ms = ModeSet(K, 0.2, 4, 30, c.default_h())
    p = ForwardProblem(c, ms, 12)
    for n in (-2, 0, 3):
        s = p.solve_plane_wave(ModeWave.downward(n))
        assert energy_defect(ms, s.rayleigh, n) < 1e-10


def test_absorbing_contrast_loses_energy(ball_problem):
    s = ball_problem.solve_plane_wave(ModeWave.downward(0))
    ms = ball_problem.mode_set
    b = ms.beta_n(ms.n_dtn)
    prop = ms.propagating(ms.n_dtn)
    trans = s.rayleigh.u_minus.copy()
    trans[ms.n_dtn] += np.exp(1j * K * ms.h)
    flux = np.sum(b[prop].real * (np.abs(s.rayleigh.u_plus[prop]) ** 2 + np.abs(trans[prop]) ** 2))
    assert flux < K


def test_evanescent_tail_decays(ball_problem):
    s = ball_problem.solve_incident(0, PLUS)
    ms = ball_problem.mode_set
    mags = np.abs(s.rayleigh.u_plus)
    band = ms.n_dtn
    first = int(np.floor(K)) + 1
    tail = mags[band + first:]
    tail = tail[tail > 1e-12 * mags.max()]
    assert np.all(tail[1:] <= 1.1 * tail[:-1])


def test_point_load_matches_test_sequence():
    ms = ModeSet(K, 0.0, 4, 30, 1.0)
    mesh = build_mesh(ms, 30)
    a = assemble_system(mesh, None, ms)
    node = (mesh.ny // 2) * (mesh.nx + 1) + mesh.nx // 3
    z = mesh.nodes[node]
    rhs = mesh.prolongation.T @ np.eye(mesh.n_nodes)[node]
    u = sparse_solve(a.tocsc(), rhs.astype(complex))
    t = trace_vectors(mesh, ms)
    up = t @ u[mesh.top] / (2 * np.pi)
    dn = t @ u[mesh.bottom] / (2 * np.pi)
    rp, rm = modes.test_sequence(ms, z, band=ms.n_dtn)
    sl = slice(30 - 4, 30 + 5)
    assert np.max(np.abs(up[sl] - rp[sl])) <= 5e-2 * np.abs(rp[sl]).max()
    assert np.max(np.abs(dn[sl] - rm[sl])) <= 5e-2 * np.abs(rm[sl]).max()


def test_analytic_and_projected_methods_agree(ball_problem):
    a = ball_problem.solve_incident(1, MINUS, method="analytic").rayleigh.u_plus
    b = ball_problem.solve_incident(1, MINUS, method="projected").rayleigh.u_plus
    assert np.linalg.norm(a - b) <= 5e-2 * np.linalg.norm(a)
    with pytest.raises(ValueError):
        ball_problem.solve_incident(1, MINUS, method="magic")
    with pytest.raises(ValueError):
        ball_problem.solve_incident(5, PLUS)


def test_field_table_layout(ball_problem):
    u = np.ones(ball_problem.mesh.ndof, dtype=complex)
    tab = ball_problem.field_table(u)
    assert tab.shape == (ball_problem.mesh.n_nodes, 4)
    assert np.allclose(tab[:, 2], 1) and np.allclose(tab[:, 3], 0)


def test_support_outside_truncation_rejected():
    c = builtin_geometry("ball")
    with pytest.raises(ValueError):
        ForwardProblem(c, ModeSet(K, 0.0, 2, 10, 0.5), 10)
