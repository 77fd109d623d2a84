"""Independent numerical checks of the basis, matrix and multiplier identities.

Every check draws its random data from ``numpy.random.default_rng(seed)``
and reports the worst error it saw against a fixed tolerance. The basis
checks never touch the assembled matrices; they integrate the basis and
test functions directly with composite Simpson.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_mfem, build_globals, build_O, build_primitives
from .model import Mesh, ParamProfile, SystemSpec, constant_profile
from .numerics import simpson_weights


@dataclass(frozen=True)
class CheckReport:
    check_id: str
    params: dict
    worst_error: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_row(self) -> list:
        label = ";".join(f"{k}={v}" for k, v in self.params.items())
        return [self.check_id, label, self.worst_error, self.tolerance, int(self.passed)]


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


# basis and test functions on [0, ell], evaluated from their definitions

def _omega(j, x, h, N=None):
    """Test function j (1..N): 1/h on [x_{j-1}, x_j); the last cell also keeps x_N."""
    lo, hi = (j - 1) * h, j * h
    inside = (x >= lo) & (x < hi)
    if N is not None and j == N:
        inside |= np.isclose(x, hi, rtol=0, atol=1e-14)
    return np.where(inside, 1.0 / h, 0.0)


def _psi(k, x, h):
    """Hat function k (0..N) centred on x_k."""
    xk = k * h
    up = (x >= xk - h) & (x < xk)
    down = (x >= xk) & (x <= xk + h)
    return np.where(up, (x - (xk - h)) / h, np.where(down, (xk + h - x) / h, 0.0))


def _nu(k, x, h, a):
    weight = sum(a[l - 1] * h * _omega(l, x, h) for l in range(1, len(a) + 1))
    return weight * _psi(k, x, h)


def _cell_rule(j, h, panels):
    """Simpson rule on cell j; end nodes pulled inside so one-sided limits are used."""
    s = np.linspace(0.0, 1.0, 2 * panels + 1)
    lo, hi = (j - 1) * h, j * h
    xs = lo + h * s
    xs[0] += 1e-12 * h
    xs[-1] -= 1e-12 * h
    return xs, h * simpson_weights(panels)


def check_basis_identities(N: int, seed: int = 0, panels_total: int = 10_000,
                           grid_points: int = 100_000, tol: float = 1e-8) -> CheckReport:
    if N < 3:
        raise ValueError("basis identities are checked for N >= 3")
    rng = np.random.default_rng(seed)
    h = 1.0 / N
    a = rng.normal(size=N)
    panels = math.ceil(panels_total / N)
    step = 1e-4 * h
    errs = {}

    # (a) pointwise
    x = np.linspace(0.0, 1.0, grid_points)
    Om = np.vstack([_omega(j, x, h, N) for j in range(1, N + 1)])
    same = np.abs(h * Om**2 - Om).max()
    cross = np.max(h * (np.abs(Om).sum(axis=0) ** 2 - (Om**2).sum(axis=0)))
    psiN = _psi(N, x, h)
    delta_N = (np.arange(1, N + 1) == N)[:, None]
    with_hat = np.abs(h * Om * psiN - psiN * delta_N).max()
    errs["a"] = float(max(same, cross, with_hat))

    def inner(j, g):
        xs, w = _cell_rule(j, h, panels)
        return float(np.dot(w, g(xs, j)) / h)

    def deriv(fn):
        # differences never reach across a node, so the classical derivative is exact
        def d(xs, j):
            lo, hi = (j - 1) * h, j * h
            left = np.clip(xs - step, lo + 1e-12 * h, None)
            right = np.clip(xs + step, None, hi - 1e-12 * h)
            return (fn(right, j) - fn(left, j)) / (right - left)
        return d

    worst_b = worst_c = worst_d = worst_e = 0.0
    for j in range(1, N + 1):
        for k in range(0, N + 1):
            expect_b = 0.5 if j in (k, k + 1) else 0.0
            psi = lambda xs, j_: _psi(k, xs, h)  # noqa: E731
            worst_b = max(worst_b, abs(inner(j, psi) - expect_b))
            expect_c = 1.0 / h if j == k else (-1.0 / h if j == k + 1 else 0.0)
            got_c = inner(j, deriv(psi))
            worst_c = max(worst_c, abs(got_c - expect_c))
            if k == 0:
                continue
            nu = lambda xs, j_=None: _nu(k, xs, h, a)  # noqa: E731
            expect_d = a[j - 1] / 2 if j in (k, k + 1) else 0.0
            worst_d = max(worst_d, abs(inner(j, nu) - expect_d))
            # distributional derivative: classical part plus the jump at the
            # left end of the cell, which is where the half-open test function sees it
            xl = (j - 1) * h
            # one-sided limits by linear extrapolation, exact on each cell
            side = np.array([1e-6, 2e-6]) * h
            right, left = nu(xl + side), nu(xl - side)
            jump = (2 * right[0] - right[1]) - (2 * left[0] - left[1])
            got_e = inner(j, deriv(nu)) + jump / h
            expect_e = a[k - 1] / h if j == k else (-a[k - 1] / h if j == k + 1 else 0.0)
            worst_e = max(worst_e, abs(got_e - expect_e))
    errs.update(b=worst_b, c=worst_c, d=worst_d, e=worst_e)
    worst = max(errs.values())
    return CheckReport("basis_identities", {"N": N, "seed": seed}, worst, tol, worst <= tol, errs)


def _random_invertible(rng, n):
    while True:
        A = rng.normal(size=(n, n)) + 1.5 * np.eye(n)
        if 1.0 / np.linalg.cond(A) > 1e-3:
            return A


def random_spec(n: int, seed: int = 0) -> SystemSpec:
    """Smooth random system with diagonal damping, for oracle runs."""
    rng = np.random.default_rng(seed)
    A = _random_invertible(rng, n)
    K = np.diag(rng.uniform(0.2, 2.0, n))

    def profile(scale, amp, freq, phase):
        return ParamProfile(lambda x: scale * (1.0 + amp * np.sin(freq * x + phase)),
                            lambda x: scale * amp * freq * np.cos(freq * x + phase))

    thq = [profile(*rng.uniform([0.5, 0.0, 1.0, 0.0], [2.0, 0.4, 4.0, 6.0])) for _ in range(n)]
    thp = [profile(*rng.uniform([0.5, 0.0, 1.0, 0.0], [2.0, 0.4, 4.0, 6.0])) for _ in range(n)]
    return SystemSpec(n=n, x_l=0.0, x_r=1.0, A=A, K=K, theta_q=thq, theta_p=thp, name=f"random-{n}-{seed}")


def check_matrix_identities(n: int, N: int, seed: int = 0, tol: float = 1e-12) -> CheckReport:
    rng = np.random.default_rng(seed)
    A = _random_invertible(rng, n)
    K = np.diag(rng.uniform(0.2, 2.0, n))
    ones = tuple(constant_profile(1.0) for _ in range(n))
    spec = SystemSpec(n=n, x_l=0.0, x_r=1.0, A=A, K=K, theta_q=ones, theta_p=ones)
    g = build_globals(spec, Mesh(N))
    t = build_primitives(N).t_r[:, None]
    In = np.eye(n)
    I = np.eye(n * N)
    Mi = np.linalg.inv(g.M)
    AiT = np.linalg.inv(g.A).T
    It = np.kron(In, t)
    errs = {
        "B1": _rel(g.M.T @ g.D, g.D @ g.M.T),
        "B2": _rel(Mi @ g.D.T, g.D.T @ Mi),
        "B3": _rel(0.5 * g.D.T + g.M, I),
        "B4": _rel(AiT @ Mi, Mi @ AiT),
        "B5": _rel(g.A @ g.D, g.D @ g.A),
        "B6": _rel(g.A.T @ Mi, Mi @ g.A.T),
        "B7": _rel(g.A.T @ g.D.T @ Mi, Mi @ g.D.T @ g.A.T),
        "B1_alt": _rel(g.B1, 0.5 * It @ np.linalg.inv(A).T @ K @ It.T),
        "B2_alt": _rel(g.B2, It @ K @ It.T),
        "W_commute": _rel(AiT @ g.W, g.W @ AiT),
    }
    worst = max(errs.values())
    return CheckReport("matrix_identities", {"n": n, "N": N, "seed": seed}, worst, tol, worst <= tol, errs)


def check_w_bound(n: int, N: int, trials: int = 10_000, seed: int = 0, tol: float = 1e-10,
                  A=None, ell: float = 1.0) -> CheckReport:
    rng = np.random.default_rng(seed)
    A = _random_invertible(rng, n) if A is None else np.atleast_2d(A)
    ones = tuple(constant_profile(1.0) for _ in range(n))
    spec = SystemSpec(n=n, x_l=0.0, x_r=ell, A=A, K=np.eye(n), theta_q=ones, theta_p=ones)
    g = build_globals(spec, Mesh(N, 0.0, ell))
    G = rng.normal(size=(n * N, trials))
    norms = np.linalg.norm(G, axis=0)
    ratio = np.maximum(np.linalg.norm(g.W @ G, axis=0), np.linalg.norm(g.W.T @ G, axis=0)) / (ell * norms)
    violations = int(np.sum(ratio >= 1.0))
    Z = np.zeros((n * N, n * N))
    Pbar = np.block([[Z, g.A], [g.A.T, Z]])
    Pinv = np.linalg.inv(Pbar)
    P1inv = np.linalg.inv(spec.P1)
    big = np.linalg.eigvalsh(Pinv @ Pinv).max()
    small = np.linalg.eigvalsh(P1inv @ P1inv).max()
    eig_err = abs(big - small) / small
    detail = {"max_ratio": float(ratio.max()), "violations": violations, "eig_identity": eig_err}
    passed = violations == 0 and eig_err <= tol
    return CheckReport("w_bound", {"n": n, "N": N, "trials": trials, "seed": seed},
                       float(eig_err), tol, passed, detail)


def check_inner_identities(N: int, seed: int = 0, trials: int = 10_000, tol: float = 1e-12,
                           theta=None, ell: float = 1.0) -> CheckReport:
    rng = np.random.default_rng(seed)
    prim = build_primitives(N)
    M, D, C, t = prim.M, prim.D, prim.C, prim.t_r
    h = ell / N
    th = rng.uniform(0.5, 2.0, N) if theta is None else np.asarray(theta, dtype=float)
    Lt = np.diag(th)
    Linv = np.diag(1.0 / th)
    O = build_O(th)
    F = rng.normal(size=(N, trials))
    F[:, 0] = 0.0

    def quad(Amat):
        return np.einsum("it,ij,jt->t", F, Amat, F)

    # first statement: an inequality
    lhs1 = h * np.einsum("it,it->t", M @ Linv @ M.T @ F, C @ F)
    rhs1 = (-0.5 * h * quad(M @ Linv @ (Lt - O) @ Linv @ M.T)
            + 0.5 * ell / th[-1] * F[-1] ** 2)
    scale1 = np.abs(lhs1) + np.abs(rhs1)
    slack = rhs1 - lhs1
    violations = int(np.sum(slack < -1e-12 * scale1))
    # second statement: an identity
    lhs2 = -np.einsum("it,it->t", D.T @ Lt @ D @ F, C @ F) / h
    term_a = -quad(D.T @ (Lt - O) @ D) / (2 * h)
    term_b = -N * th[-1] / (2 * h) * (t @ D @ F) ** 2
    scale2 = np.abs(lhs2) + np.abs(term_a) + np.abs(term_b)
    nz = scale2 > 0
    err2 = float(np.max(np.abs(lhs2 - term_a - term_b)[nz] / scale2[nz])) if nz.any() else 0.0
    detail = {"iden2_rel": err2, "iden1_violations": violations,
              "iden1_min_slack": float(np.min(slack[nz] / scale1[nz])) if nz.any() else 0.0}
    passed = err2 <= tol and violations == 0
    return CheckReport("inner_identities", {"N": N, "trials": trials, "seed": seed}, err2, tol, passed, detail)


def check_dVe_formula(model, seed: int = 0, trials: int = 16, tol: float = 1e-9) -> CheckReport:
    """Chain-rule rate of the multiplier functional against its closed form."""
    rng = np.random.default_rng(seed)
    g, h = model.glob, model.h
    nN = model.n * model.N
    E = rng.normal(size=(2 * nN, trials))
    E[:, 0] = 0.0
    Vm = model.multiplier_matrix
    Edot = np.linalg.solve(model.S, model.dynamics @ E)
    chain = 2.0 * np.einsum("it,ij,jt->t", E, Vm, Edot)
    SE = model.S @ E
    u = h * np.linalg.solve(g.D, SE[:nN])
    v = E[nN:]
    MLM = g.M @ np.diag(1.0 / g.lam_p) @ g.M.T
    DLD = g.D.T @ np.diag(g.lam_q) @ g.D
    t1 = h * np.einsum("it,it->t", MLM @ v, g.C @ v)
    t2 = -np.einsum("it,it->t", DLD @ u, g.C @ u) / h
    t3 = -2.0 * np.einsum("it,it->t", g.C @ u, g.B1 @ v)
    formula = t1 + t2 + t3
    scale = np.abs(t1) + np.abs(t2) + np.abs(t3) + np.abs(chain)
    nz = scale > 0
    err = float(np.max(np.abs(chain - formula)[nz] / scale[nz])) if nz.any() else 0.0
    zero_state = float(abs(chain[0]) + abs(formula[0]))
    params = {"n": model.n, "N": model.N, "spec": model.spec.name, "seed": seed}
    return CheckReport("dVe_formula", params, err, tol, err <= tol and zero_state == 0.0,
                       {"zero_state": zero_state})


def run_suite(ns=(1, 2, 3), Ns=(3, 5, 17, 64), seed: int = 0, trials: int = 10_000) -> list:
    """Every check on the full (n, N) grid; each check gets its own derived seed."""
    reports = []
    for N in Ns:
        reports.append(check_basis_identities(N, seed + N))
        reports.append(check_inner_identities(N, seed + N, trials))
        for n in ns:
            s = seed + 1000 * n + N
            reports.append(check_matrix_identities(n, N, s))
            reports.append(check_w_bound(n, N, trials, s))
            reports.append(check_dVe_formula(assemble_mfem(random_spec(n, s), Mesh(N)), s))
    return reports


def suite_table(reports) -> tuple:
    return ["check_id", "params", "worst_error", "tolerance", "passed"], [r.as_row() for r in reports]


def timed_suite(**kwargs):
    t0 = time.perf_counter()
    reports = run_suite(**kwargs)
    return reports, time.perf_counter() - t0
