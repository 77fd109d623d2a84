"""The nine acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated together in
the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from phs_mfem.assembly import assemble
from phs_mfem.lqr import gain_sweep, solve_care
from phs_mfem.model import make_piezo_preset, make_wave_preset
from phs_mfem.oracle import run_suite
from phs_mfem.simulate import fit_decay_rate, multiplier_trace, simulate, smooth_initial_state
from phs_mfem.stability import continuous_certificate, discrete_certificate, large_n_search, stability_sweep

from conftest import linear_spec, record_criterion

DOUBLING = [10, 20, 40, 80, 160, 320]
GAIN_MESHES = [20, 40, 80, 160]


@pytest.fixture(scope="module")
def wave_spec():
    return make_wave_preset(rho0=1.0, tau0=1.0, kappa1=0.5)


@pytest.fixture(scope="module")
def decay_run(wave_spec):
    model = assemble(wave_spec, 40, "mfem")
    traj = simulate(model, smooth_initial_state(model), T=20.0)
    return model, traj, discrete_certificate(wave_spec, 40)


@pytest.fixture(scope="module")
def gain_sweeps(wave_spec):
    t0 = time.perf_counter()
    mfem = gain_sweep(wave_spec, GAIN_MESHES, "mfem")
    fem = gain_sweep(wave_spec, GAIN_MESHES, "fem")
    return mfem, fem, time.perf_counter() - t0


def test_criterion_1_piezo_certificate():
    t0 = time.perf_counter()
    spec = make_piezo_preset()
    cont = continuous_certificate(spec)
    disc = {N: discrete_certificate(spec, N).delta for N in (10, 100, 1000)}
    wall = time.perf_counter() - t0
    ok = (abs(cont.delta - 8 / 9) <= 1e-6 and all(abs(d - 8 / 9) <= 1e-6 for d in disc.values())
          and wall < 10.0)
    record_criterion(1, ok, f"delta_c={cont.delta:.9f} delta_d={[round(d, 9) for d in disc.values()]} "
                            f"time={wall:.1f}s")
    assert ok


def test_criterion_2_identity_suites():
    t0 = time.perf_counter()
    reports = run_suite(ns=(1, 2, 3), Ns=(3, 5, 17, 64), seed=0, trials=10_000)
    wall = time.perf_counter() - t0
    failed = [(r.check_id, r.params) for r in reports if not r.passed]
    kinds = sorted({r.check_id for r in reports})
    ok = not failed and wall < 60.0 and len(kinds) == 5
    record_criterion(2, ok, f"{len(reports)} checks over {kinds}, failed={failed} time={wall:.1f}s")
    assert ok


def test_criterion_3_uniform_stability(wave_spec):
    t0 = time.perf_counter()
    res = stability_sweep(wave_spec, DOUBLING, "mfem")
    wall = time.perf_counter() - t0
    sigma = res.column("sigma_max_open")
    alpha = res.column("alpha_bound")
    bound_ok = bool(np.all(sigma <= -alpha / 2 + 1e-6))
    gap_ok = sigma.max() <= -0.9 * abs(sigma[0])
    ok = bound_ok and gap_ok and wall < 300
    record_criterion(3, ok, f"sigma_max={np.round(sigma, 5).tolist()} -alpha/2={-alpha[0] / 2:.5f} "
                            f"time={wall:.1f}s")
    assert ok


def test_criterion_4_fem_degeneration(wave_spec):
    res = stability_sweep(wave_spec, DOUBLING, "fem")
    mag = np.abs(res.column("sigma_max_open"))
    ok = bool(np.all(np.diff(mag) < 0)) and mag[-1] < 0.5 * mag[0]
    record_criterion(4, ok, f"|sigma_max|={np.round(mag, 6).tolist()}")
    assert ok


def test_criterion_5_energy_decay(wave_spec, decay_run):
    model, traj, cert = decay_run
    fit = fit_decay_rate(traj)
    lossless = assemble(wave_spec.lossless(), 40, "mfem")
    e0 = smooth_initial_state(lossless)
    steps = 10_000
    dt = traj.dt
    long = simulate(lossless, e0, T=steps * dt, dt=dt)
    drift = float(np.max(np.abs(long.H - long.H[0])) / long.H[0])
    ok = fit.rate >= 0.95 * cert.alpha and fit.monotone and long.steps == steps and drift <= 1e-10
    record_criterion(5, ok, f"rate={fit.rate:.4f} >= 0.95*alpha_d={0.95 * cert.alpha:.4f}, "
                            f"monotone={fit.monotone}, lossless drift={drift:.2e} over {long.steps} steps")
    assert ok


def test_criterion_6_multiplier_conditions(decay_run):
    model, traj, cert = decay_run
    rep = multiplier_trace(model, traj, cert)
    seeded = simulate(model, smooth_initial_state(model, seed=0), T=20.0)
    rep2 = multiplier_trace(model, seeded, cert)
    ok = rep.c1_violations == 0 and rep.c2_violations == 0 and rep2.c1_violations == 0 and rep2.c2_violations == 0
    record_criterion(6, ok, f"C1 violations={rep.c1_violations}/{rep2.c1_violations}, "
                            f"C2 violations={rep.c2_violations}/{rep2.c2_violations}, "
                            f"C2 margin={min(rep.c2_margin, rep2.c2_margin):.4f}")
    assert ok


def test_criterion_7_care(gain_sweeps):
    scalar = solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]]).Pi[0, 0]
    mfem, fem, _ = gain_sweeps
    designs = mfem.designs + fem.designs
    worst = max(d.residual for d in designs)
    closed = max(d.closed_loop_abscissa for d in designs)
    ok = abs(scalar - (math.sqrt(2) - 1)) <= 1e-10 and worst <= 1e-8 and closed < 0
    record_criterion(7, ok, f"Pi={scalar:.12f} worst residual={worst:.2e} worst closed-loop abscissa={closed:.4g}")
    assert ok


def test_criterion_8_gain_convergence(gain_sweeps):
    mfem, fem, wall = gain_sweeps
    diffs = mfem.column("diff")[1:]
    rel = mfem.column("rel_diff")[-1]
    sups = fem.column("sup_norm")
    ok = bool(np.all(np.diff(diffs) < 0)) and rel <= 0.1 and bool(np.all(np.diff(sups) > 0)) and wall < 600
    record_criterion(8, ok, f"mfem diffs={np.round(diffs, 2).tolist()} final rel={rel:.4f}; "
                            f"fem sup={np.round(sups, 1).tolist()} time={wall:.1f}s")
    assert ok


def test_criterion_9_large_n():
    spec = linear_spec()
    res = large_n_search(spec)
    ok = res.N_star is not None and res.history[res.N_star] >= 0.5 * (1 - 1e-3)
    record_criterion(9, ok, f"N*={res.N_star} delta_d={res.history.get(res.N_star, float('nan')):.6f} "
                            f"target={res.target:.6f}")
    assert ok
