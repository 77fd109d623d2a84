"""Infinite-horizon LQ design on the discrete models."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .assembly import assemble
from .numerics import NumericsError, eig_general, ordered_map, solve_lyapunov, sym

STATE_WEIGHT = 10.0
CONTROL_WEIGHT = 1e-3
PROFILE_GRID = np.linspace(0.0, 1.0, 1001)


class CareError(NumericsError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


def to_state_space(model, state_weight: float = STATE_WEIGHT, control_weight: float = CONTROL_WEIGHT):
    """(A_N, B_N, W_N, R_N) with x^T W_N x = 2 state_weight H_d."""
    A = model.state_matrix
    B = model.state_input
    W = state_weight * model.energy_matrix
    ev = np.linalg.eigvalsh(W)
    if ev.size and ev.min() < -1e-10 * max(abs(ev).max(), 1e-300):
        raise ValueError(f"state weight is indefinite (min eigenvalue {ev.min():.3e})")
    R = control_weight * np.eye(B.shape[1])
    return A, B, W, R


def care_residual(A, B, W, R, Pi) -> float:
    """Frobenius residual of the CARE relative to the sum of its term norms."""
    G = B @ np.linalg.solve(R, B.T)
    terms = (A.T @ Pi, Pi @ A, Pi @ G @ Pi, W)
    res = terms[0] + terms[1] - terms[2] + terms[3]
    scale = sum(np.linalg.norm(t) for t in terms)
    return float(np.linalg.norm(res) / scale) if scale > 0 else 0.0


def _stabilizing_start(A, B, R):
    """Zero gain for Hurwitz A, otherwise a shifted Bass gain."""
    sigma = eig_general(A).abscissa
    if sigma < 0:
        return np.zeros((B.shape[1], A.shape[0]))
    shift = 2.0 * abs(sigma) + 1e-3
    As = -(A + shift * np.eye(A.shape[0]))
    # As Z + Z As^T = -2 B R^{-1} B^T with As Hurwitz
    Z = sla.solve_continuous_lyapunov(As, -2.0 * B @ np.linalg.solve(R, B.T))
    return np.linalg.solve(R, B.T) @ np.linalg.pinv(sym(Z))


@dataclass(frozen=True)
class CareSolution:
    Pi: np.ndarray
    residual: float
    iterations: int
    trace: list = field(default_factory=list)


def solve_care(A, B, W, R, tol: float = 1e-8, max_iter: int = 100) -> CareSolution:
    """A^T Pi + Pi A - Pi B R^{-1} B^T Pi + W = 0 by Newton-Kleinman."""
    A, B, W, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, W, R))
    W = sym(W)
    n = A.shape[0]
    if B.size == 0 or not np.any(B):
        Pi = solve_lyapunov(A, W)
        return CareSolution(Pi, care_residual(A, np.zeros((n, 1)), W, np.eye(1), Pi), 1, [])
    gain = _stabilizing_start(A, B, R)
    trace, Pi_prev = [], None
    for it in range(1, max_iter + 1):
        Acl = A - B @ gain
        try:
            Pi = solve_lyapunov(Acl, W + gain.T @ R @ gain)
        except NumericsError as exc:
            raise CareError(f"Newton iterate {it} is not stabilizing: {exc}", trace) from exc
        gain = np.linalg.solve(R, B.T @ Pi)
        res = care_residual(A, B, W, R, Pi)
        trace.append(res)
        step = np.inf if Pi_prev is None else np.linalg.norm(Pi - Pi_prev) / max(np.linalg.norm(Pi), 1e-300)
        if res <= 1e-3 * tol or (res <= tol and step <= 1e-12):
            return CareSolution(Pi, res, it, trace)
        Pi_prev = Pi
    if trace and trace[-1] <= tol:
        return CareSolution(Pi, trace[-1], max_iter, trace)
    raise CareError(f"no converged stabilizing iterate within {max_iter} Newton steps", trace)


@dataclass(frozen=True)
class LqrDesign:
    """Riccati solution, gains and their spatial profiles for one mesh.

    ``K`` is the state feedback u = -K e. ``K_d`` acts on the mass-normalized
    descriptor state (S_d e for the mixed scheme, E e / h for the comparator)
    and is the quantity whose rows, divided by h, give the profiles.
    """

    scheme: str
    N: int
    h: float
    Pi: np.ndarray
    K: np.ndarray
    K_d: np.ndarray
    k_q: np.ndarray
    k_p: np.ndarray
    x_q: np.ndarray
    x_p: np.ndarray
    closed_loop_abscissa: float
    open_loop_abscissa: float
    residual: float
    descriptor_residual: float
    iterations: int
    nodes: np.ndarray

    def profile_on(self, grid=PROFILE_GRID) -> np.ndarray:
        """Profiles interpolated to ``grid``; shape (2 n l, len(grid))."""
        out = []
        for k, x in ((self.k_q, self.x_q), (self.k_p, self.x_p)):
            for row in k.reshape(-1, k.shape[-1]):
                out.append(np.interp(grid, x, row))
        return np.vstack(out)

    def functional(self, field_q, field_p) -> np.ndarray:
        """-u for a smooth co-energy field sampled at the degrees of freedom.

        ``field_z(x, i)`` gives variable i (0-based) of family z at points x.
        """
        n = self.k_q.shape[0]
        q = [field_q(self.nodes[:-1], i) for i in range(n)]
        p = [field_p(self.nodes[1:], i) for i in range(n)]
        return self.K @ np.concatenate(q + p)


def _descriptor_scale(model) -> np.ndarray:
    return model.descriptor / model.h if model.scheme == "fem" else model.descriptor


def lqr_design(model, state_weight: float = STATE_WEIGHT, control_weight: float = CONTROL_WEIGHT) -> LqrDesign:
    A, B, W, R = to_state_space(model, state_weight, control_weight)
    n, N, h = model.n, model.N, model.h
    mesh = model.mesh
    open_ = eig_general(A).abscissa
    if B.shape[1] == 0 or not np.any(B):
        Pi = solve_lyapunov(A, W) if open_ < 0 else np.zeros_like(A)
        K = np.zeros((B.shape[1], A.shape[0]))
        res, its = care_residual(A, np.zeros((A.shape[0], 1)), W, np.eye(1), Pi), 1
    else:
        sol = solve_care(A, B, W, R)
        Pi, res, its = sol.Pi, sol.residual, sol.iterations
        K = np.linalg.solve(R, B.T @ Pi)
    Sc = _descriptor_scale(model)
    K_d = np.linalg.solve(Sc.T, K.T).T
    closed = eig_general(A - B @ K).abscissa
    # descriptor Riccati with X = S^{-T} Pi S^{-1}
    S, F, Bd = model.descriptor, model.dynamics, model.input_matrix
    X = sym(np.linalg.solve(S.T, np.linalg.solve(S.T, Pi.T).T))
    if Bd.shape[1]:
        lhs = (F.T @ X @ S, S.T @ X @ F, S.T @ X @ Bd @ np.linalg.solve(R, Bd.T @ X @ S), W)
        dres = lhs[0] + lhs[1] - lhs[2] + lhs[3]
        dres = float(np.linalg.norm(dres) / sum(np.linalg.norm(t) for t in lhs))
    else:
        dres = 0.0
    per_var = K_d.reshape(K_d.shape[0], 2, n, N) / h
    k_q = np.moveaxis(per_var[:, 0], 0, 1)
    k_p = np.moveaxis(per_var[:, 1], 0, 1)
    x_q = mesh.midpoints
    x_p = mesh.midpoints if model.scheme == "mfem" else mesh.nodes[1:]
    return LqrDesign(model.scheme, N, h, Pi, K, K_d, k_q, k_p, x_q, x_p, closed, open_, res, dres, its,
                     mesh.nodes)


@dataclass(frozen=True)
class GainRow:
    N: int
    profiles: np.ndarray
    sup_norm: float
    diff: Optional[float]
    rel_diff: Optional[float]
    residual: float
    closed_loop_abscissa: float
    open_loop_abscissa: float
    wallclock: float


@dataclass(frozen=True)
class GainSweep:
    scheme: str
    rows: list
    designs: list

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    def as_table(self) -> tuple:
        header = ["N", "sup_norm", "diff", "rel_diff", "residual", "closed_loop_abscissa",
                  "open_loop_abscissa", "wallclock"]
        rows = [[r.N, r.sup_norm, r.diff, r.rel_diff, r.residual, r.closed_loop_abscissa,
                 r.open_loop_abscissa, r.wallclock] for r in self.rows]
        rows = [[float("nan") if v is None else v for v in row] for row in rows]
        return header, rows

    def profile_table(self) -> tuple:
        """Long table of interpolated profiles: one row per grid point."""
        header = ["x"]
        cols = [PROFILE_GRID]
        for r in self.rows:
            for j, prof in enumerate(r.profiles):
                header.append(f"N{r.N}_k{j}")
                cols.append(prof)
        return header, np.column_stack(cols).tolist()


def gain_sweep(spec, N_list, scheme: str = "mfem", threads: Optional[int] = None,
               state_weight: float = STATE_WEIGHT, control_weight: float = CONTROL_WEIGHT) -> GainSweep:
    N_list = [int(N) for N in N_list]
    if not N_list or N_list != sorted(N_list):
        raise ValueError("N_list must be nonempty and ascending")

    def design(N):
        t0 = time.perf_counter()
        d = lqr_design(assemble(spec, N, scheme), state_weight, control_weight)
        return d, time.perf_counter() - t0

    results = ordered_map(design, N_list, threads)
    rows, prev = [], None
    for d, wall in results:
        prof = d.profile_on()
        sup = float(np.abs(prof).max())
        diff = rel = None
        if prev is not None:
            diff = float(np.abs(prof - prev).max())
            rel = diff / sup if sup > 0 else 0.0
        rows.append(GainRow(d.N, prof, sup, diff, rel, d.residual, d.closed_loop_abscissa,
                            d.open_loop_abscissa, wall))
        prev = prof
    return GainSweep(scheme, rows, [d for d, _ in results])
