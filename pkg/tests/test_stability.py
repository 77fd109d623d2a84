import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phs_mfem.assembly import assemble, build_O
from phs_mfem.model import Mesh, make_piezo_preset, make_wave_preset, sample_params
from phs_mfem.stability import (check_D1, check_D2, continuous_certificate, continuous_delta, decay_bound, discrete_certificate,
                                discrete_delta, large_n_search, mesh_margin, spectral_abscissa,
                                stability_sweep, uniform_delta)

from conftest import linear_spec, unit_spec

EIGHT_NINTHS = 8.0 / 9.0


def test_continuous_margin_piezo(piezo):
    assert continuous_delta(piezo).delta == pytest.approx(EIGHT_NINTHS, abs=1e-12)


def test_continuous_margin_constant_and_linear():
    assert continuous_delta(unit_spec(2)).delta == 1.0
    assert continuous_delta(linear_spec()).delta == pytest.approx(0.5, abs=1e-12)


def test_probe_grid_minimum(piezo):
    with pytest.raises(ValueError):
        continuous_delta(piezo, grid_points=100)


def test_piezo_uniform_margin_n100(piezo):
    assert discrete_certificate(piezo, 100).delta == pytest.approx(EIGHT_NINTHS, abs=1e-6)


def test_per_mesh_margin_approaches_limit(piezo):
    per = {N: discrete_delta(sample_params(piezo, Mesh(N))).delta for N in (10, 100, 1000)}
    assert per[10] > per[100] > per[1000] > EIGHT_NINTHS
    assert per[1000] - EIGHT_NINTHS < 5e-3


def test_constant_profile_margin():
    assert mesh_margin(np.full(8, 3.0)) == pytest.approx(1.0, abs=2e-8)
    assert mesh_margin(np.full(8, 3.0)) < 1.0


def test_margin_against_dense_eigenvalues():
    theta = np.array([1.0, 2.0, 3.0])
    c = mesh_margin(theta)
    Lm = np.diag(theta ** -0.5)
    # (1-c) I - Lm O Lm is singular at the supremum
    top = np.linalg.eigvalsh(Lm @ build_O(theta) @ Lm).max()
    assert c == pytest.approx(1.0 - top, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=14))
def test_margin_matches_generalized_eigenvalue(theta):
    theta = np.array(theta)
    c = mesh_margin(theta)
    Lm = np.diag(theta ** -0.5)
    expect = max(0.0, 1.0 - np.linalg.eigvalsh(Lm @ build_O(theta) @ Lm).max())
    assert 0.0 <= c <= 1.0
    assert c == pytest.approx(min(expect, 1.0), abs=1e-6)


def test_D1_examples(piezo):
    for N in (5, 10, 57):
        th = sample_params(piezo, Mesh(N)).theta
        for z in "qp":
            for row in th[z]:
                assert check_D1(row, EIGHT_NINTHS).holds
    assert check_D1(np.ones(9), 0.999).holds


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([5, 50]), st.floats(0.01, 100.0), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_D1_scale_free(N, gamma, c, seed):
    theta = np.random.default_rng(seed).uniform(0.5, 2.0, N)
    base = check_D1(theta, c).holds
    assert check_D1(gamma * theta, c).holds == base
    assert check_D1(gamma / theta, c).holds == base


def test_D2_verbatim_arithmetic():
    theta = np.array([1.0, 2.0, 3.0])
    r = check_D2(theta, 0.5)
    # odd-index minimum 1, even-index minimum 2, scaled by (1-c)
    odd, even = 0.5 * 1.0, 0.5 * 2.0
    pairs = (1 - 2) ** 2 + (1 - 3) ** 2 + (2 - 3) ** 2
    assert r.lhs == pytest.approx(8.0 / 6.0 * odd * even - 0.25 * pairs)
    assert r.rhs == pytest.approx(1 * 1 + 4 * 1)
    assert r.advisory
    const = check_D2(np.ones(6), 0.5)
    assert const.lhs > 0 and const.rhs == 0 and not const.holds


def test_decay_bound_unit_wave():
    cert = decay_bound(unit_spec(K=1.0), 1.0)
    assert cert.epsilon0 == pytest.approx(1.0)
    assert cert.details["mu_psi"] == pytest.approx(2.0)
    assert cert.epsilon1 == pytest.approx(1.0)
    assert cert.alpha == pytest.approx(0.5)


def test_discrete_equals_continuous_rate(piezo):
    assert discrete_certificate(piezo, 10).alpha == pytest.approx(continuous_certificate(piezo).alpha, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.0, 0.5))
def test_alpha_monotone_in_delta(delta, bump):
    spec = make_wave_preset()
    lo = decay_bound(spec, delta).alpha
    hi = decay_bound(spec, min(1.0, delta + bump)).alpha
    assert hi >= lo


def test_large_n_search_linear_profile():
    r = large_n_search(linear_spec())
    assert r.N_star is not None
    assert r.history[r.N_star] >= 0.5 * (1 - 1e-3)


def test_uniform_margin_is_at_most_each_mesh(piezo):
    u = uniform_delta(piezo, 16)
    assert all(u.delta <= v for v in u.per_mesh.values())
    assert u.delta <= u.limit


def test_lossless_abscissa(wave):
    assert abs(spectral_abscissa(assemble(wave.lossless(), 8)).abscissa) <= 1e-8


def test_two_cell_spectrum_by_hand(wave):
    model = assemble(wave, 2)
    A = model.state_matrix
    # characteristic polynomial coefficients from the trace and determinant identities
    ev = np.linalg.eigvals(A)
    coeffs = np.poly(A)
    assert coeffs[1] == pytest.approx(-np.trace(A), rel=1e-12)
    assert coeffs[-1] == pytest.approx(np.linalg.det(A), rel=1e-10)
    roots = np.roots(coeffs)
    assert max(roots.real) == pytest.approx(spectral_abscissa(model).abscissa, abs=1e-8)
    assert ev.size == 4


def test_sweep_rows(wave):
    res = stability_sweep(wave, [10, 20, 40], "mfem")
    assert list(res.column("N")) == [10, 20, 40]
    assert np.all(res.column("sigma_max_open") < 0)
    assert np.all(res.column("sigma_max_open") <= -0.5 * res.column("alpha_bound") + 1e-6)
    header, rows = res.as_table()
    assert header[0] == "N" and len(rows) == 3


def test_fem_sweep_degenerates(wave):
    res = stability_sweep(wave, [10, 20, 40], "fem")
    mags = np.abs(res.column("sigma_max_open"))
    assert np.all(np.diff(mags) < 0)


def test_lossless_sweep_is_marginal(wave):
    res = stability_sweep(wave.lossless(), [4, 8], "mfem")
    assert np.all(np.abs(res.column("sigma_max_open")) <= 1e-8)


def test_sweep_needs_ascending(wave):
    with pytest.raises(ValueError):
        stability_sweep(wave, [20, 10])


def test_margin_never_exceeds_one():
    spec = make_piezo_preset(gamma=0.0)
    d = discrete_delta(sample_params(spec, Mesh(40))).delta
    assert 0 < d <= 1
