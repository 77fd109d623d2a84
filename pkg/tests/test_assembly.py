from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phs_mfem.assembly import (DofLayout, assemble, assemble_fem, assemble_mfem, build_O, build_globals,
                               build_primitives, input_quadrature, multiplier_weights)
from phs_mfem.model import Mesh, SystemSpec, constant_profile
from phs_mfem.oracle import check_matrix_identities, random_spec

from conftest import unit_spec


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def test_primitives_n3():
    p = build_primitives(3)
    np.testing.assert_array_equal(p.D, [[1, 0, 0], [-1, 1, 0], [0, -1, 1]])
    np.testing.assert_array_equal(p.M, [[0.5, 0.5, 0], [0, 0.5, 0.5], [0, 0, 0.5]])
    np.testing.assert_array_equal(p.C, 0.5 * np.array([[0, 1, 0], [-2, 0, 2], [0, -6, 6]]))
    np.testing.assert_array_equal(p.t_r, [0, 0, 1])


@pytest.mark.parametrize("N", [2, 3, 7, 12])
def test_primitive_invariants(N):
    p = build_primitives(N)
    np.testing.assert_array_equal(p.L, np.eye(N, k=-1))
    np.testing.assert_array_equal(p.D, np.eye(N) - p.L)
    np.testing.assert_array_equal(p.M, 0.5 * (np.eye(N) + p.L.T))
    w = multiplier_weights(N)
    assert w[(N - 1, N - 2)] == -N and w[(N - 1, N - 1)] == N
    for j in range(2, N):
        assert 2 * w[(j - 1, j - 2)] == -j and 2 * w[(j - 1, j)] == j


def test_B3_exact_in_rationals():
    N = 3
    Dt = [[Fraction(int(i == j) - int(j == i + 1)) for j in range(N)] for i in range(N)]  # D^T
    M = [[Fraction(int(i == j) + int(j == i + 1), 2) for j in range(N)] for i in range(N)]
    for i in range(N):
        for j in range(N):
            assert Dt[i][j] / 2 + M[i][j] == int(i == j)


def test_build_O_examples():
    np.testing.assert_array_equal(build_O([1.0, 2.0, 3.0]), 0.5 * np.array([[0, 1, 0], [1, 0, 2], [0, 2, 0]]))
    assert not np.any(build_O(np.full(5, 2.5)))
    O = build_O([0.95, 0.90])
    assert O[0, 1] == pytest.approx(-0.025, rel=1e-12)


def test_input_quadrature_examples():
    def spec_with(b):
        one = (constant_profile(1.0),)
        return SystemSpec(n=1, x_l=0, x_r=1, A=[[1.0]], K=[[1.0]], theta_q=one, theta_p=one,
                          b_q=b, b_p=b, input_dim=1)

    q = input_quadrature(spec_with(lambda x, i, k: np.ones_like(x)), Mesh(5))
    np.testing.assert_allclose(q.Bq, 1.0, rtol=1e-14)
    q = input_quadrature(spec_with(lambda x, i, k: x), Mesh(2))
    assert q.Bq[0, 0] == pytest.approx(0.25, rel=1e-14)


def test_wave_input_vanishes_right_of_actuator(wave):
    q = input_quadrature(wave, Mesh(20))
    assert not np.any(q.Bp[2:])
    assert np.all(q.Bp[:2] > 0)


def test_layout():
    lay = DofLayout(2, 3)
    assert lay.size == 12
    assert lay.index("q", 1, 0) == 0
    assert lay.index("q", 2, 2) == 5
    assert lay.index("p", 1, 1) == 6
    assert lay.index("p", 2, 3) == 11
    with pytest.raises(IndexError):
        lay.index("p", 1, 0)


def test_constant_unit_parameters_scale():
    m = assemble_mfem(unit_spec(), Mesh(2))
    np.testing.assert_allclose(m.S, m.Q / m.h, rtol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(2, 12), st.integers(0, 10_000))
def test_structure_on_random_systems(n, N, seed):
    model = assemble_mfem(random_spec(n, seed), Mesh(N))
    J, R = model.J, model.R
    assert np.linalg.norm(J + J.T) <= 1e-12 * np.linalg.norm(J)
    assert np.linalg.eigvalsh(R).min() >= -1e-12 * np.abs(R).max()
    rng = np.random.default_rng(seed)
    e = rng.normal(size=2 * n * N)
    lhs = model.dynamics @ e
    assert _rel(lhs, model.unreduced_rhs(e)) <= 1e-10
    # dH/dt = -e^T Q^T R Q e equals the boundary loss
    assert e @ model.dissipation_matrix @ e == pytest.approx(float(model.boundary_dissipation(e)), rel=1e-10)


def test_descriptor_blocks(piezo):
    model = assemble(piezo, 6)
    g = model.glob
    nN = 12
    G = np.block([[g.M, -g.B1], [np.zeros((nN, nN)), g.M.T]])
    lam = np.concatenate([g.lam_q, g.lam_p])
    np.testing.assert_allclose(model.Q, model.h * G)
    np.testing.assert_allclose(model.S, G / lam[:, None])


def test_wave_boundary_row_by_hand(wave):
    model = assemble(wave, 4)
    e = np.zeros(8)
    e[-1] = 1.0
    # q rows: (1/h) A D e^p picks +1/h at the last cell; p rows: -kappa1/h at the tip
    expect = np.zeros(8)
    expect[3] = 4.0
    expect[7] = -0.5 * 4.0
    np.testing.assert_allclose(model.dynamics @ e, expect, atol=1e-12)


def test_matrix_identities_small():
    r = check_matrix_identities(3, 5, seed=11)
    assert r.passed, r.detail


def test_w_matrix_definition(piezo):
    g = build_globals(piezo, Mesh(7))
    W = -Mesh(7).h * np.linalg.solve(g.D.T, g.C.T @ g.M)
    np.testing.assert_allclose(g.W, W, atol=1e-14)


def test_non_diagonal_damping_rejected():
    one = (constant_profile(1.0),) * 2
    spec = SystemSpec(n=2, x_l=0, x_r=1, A=np.eye(2), K=[[2.0, 0.5], [0.5, 2.0]], theta_q=one, theta_p=one)
    with pytest.raises(ValueError, match="non-diagonal K"):
        assemble(spec, 4)


def test_fem_mass_stencil():
    m = assemble_fem(unit_spec(), Mesh(6))
    h = m.h
    Ep = m.E[6:, 6:]
    np.testing.assert_allclose(Ep[2, 1:4], h * np.array([1 / 6, 2 / 3, 1 / 6]), rtol=1e-13)
    np.testing.assert_allclose(np.diag(m.E[:6, :6]), h, rtol=1e-13)
    assert np.linalg.eigvalsh(m.E).min() > 0


def test_fem_skew_up_to_boundary(wave):
    m = assemble_fem(wave, Mesh(8))
    S = m.A_fe + m.A_fe.T
    nz = np.argwhere(np.abs(S) > 1e-14)
    np.testing.assert_array_equal(nz, [[15, 15]])


def test_fem_dimensions_n2(wave, piezo):
    assert assemble_fem(wave, Mesh(2)).E.shape == (4, 4)
    assert assemble_fem(piezo, Mesh(2)).E.shape == (8, 8)
    assert assemble_fem(wave, Mesh(2)).B_fe.shape == (4, 1)


def test_unknown_scheme(wave):
    with pytest.raises(ValueError, match="unknown scheme"):
        assemble(wave, 4, "dg")
