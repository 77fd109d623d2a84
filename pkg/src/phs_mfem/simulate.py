"""Implicit-midpoint time integration with energy and multiplier traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

C2_SLACK = 1e-2


@dataclass(frozen=True, eq=False)
class LinearDescriptor:
    """Minimal E de/dt = F e + B u system, for tests and custom models."""

    descriptor: np.ndarray
    dynamics: np.ndarray
    input_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("descriptor", "dynamics"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if self.input_matrix is None:
            object.__setattr__(self, "input_matrix", np.zeros((self.descriptor.shape[0], 0)))


class MidpointStepper:
    """Prefactored implicit midpoint map for a fixed step."""

    def __init__(self, model, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        self.dt = float(dt)
        S = model.descriptor
        F = model.dynamics
        self.B = model.input_matrix
        lhs = S - 0.5 * dt * F
        self.rhs = S + 0.5 * dt * F
        self.lu = sla.lu_factor(lhs)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.min() <= 1e-14 * diag.max():
            raise ValueError(f"midpoint step matrix is singular for dt={dt!r}")

    def __call__(self, e, u_mid=None) -> np.ndarray:
        b = self.rhs @ e
        if u_mid is not None and self.B.shape[1]:
            b = b + self.dt * (self.B @ np.atleast_1d(u_mid))
        return sla.lu_solve(self.lu, b)


def step_midpoint(model, e, u_mid, dt: float) -> np.ndarray:
    """S (e+ - e)/dt = F (e+ + e)/2 + B u_mid."""
    return MidpointStepper(model, dt)(np.asarray(e, dtype=float), u_mid)


def wave_speed(spec, grid_points: int = 1001) -> float:
    """Largest characteristic speed sqrt(eig(A Lambda_p A^T Lambda_q)) over the domain."""
    x = spec.probe_grid(grid_points)
    q = np.vstack([p(x) for p in spec.theta_q])
    p = np.vstack([p(x) for p in spec.theta_p])
    best = 0.0
    for k in range(x.size):
        sq = np.sqrt(q[:, k])
        Msym = (sq[:, None] * spec.A) * p[:, k] @ (spec.A.T * sq[None, :])
        best = max(best, float(np.linalg.eigvalsh(Msym).max()))
    return math.sqrt(best)


def default_dt(model) -> float:
    return model.h / (2.0 * wave_speed(model.spec))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    H: np.ndarray
    V_eps: np.ndarray
    dissipation: np.ndarray
    balance_error: np.ndarray
    dt: float

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def as_table(self, full_state: bool = False) -> tuple:
        header = ["t", "H_d", "V_eps", "dissipation"]
        diss = np.append(self.dissipation, np.nan)
        cols = [self.times, self.H, self.V_eps, diss]
        if full_state:
            header += [f"e{j}" for j in range(self.states.shape[1])]
            cols += list(self.states.T)
        return header, np.column_stack(cols).tolist()


def simulate(model, e0, u_of_t: Optional[Callable] = None, T: float = 20.0, dt: Optional[float] = None) -> Trajectory:
    """Integrate from e0 over [0, T]; u_of_t(t) gives the input, evaluated at step midpoints."""
    dt = default_dt(model) if dt is None else float(dt)
    if not T >= dt:
        raise ValueError(f"horizon T={T!r} shorter than dt={dt!r}")
    steps = int(round(T / dt))
    stepper = MidpointStepper(model, dt)
    e = np.asarray(e0, dtype=float).copy()
    states = np.empty((steps + 1, e.size))
    states[0] = e
    u_mid = np.empty((steps, model.input_matrix.shape[1]))
    for m in range(steps):
        u = None
        if u_of_t is not None and model.input_matrix.shape[1]:
            u = np.atleast_1d(u_of_t((m + 0.5) * dt))
            u_mid[m] = u
        else:
            u_mid[m] = 0.0
        e = stepper(e, u)
        states[m + 1] = e
    times = np.arange(steps + 1) * dt
    H = model.energy(states)
    mids = 0.5 * (states[1:] + states[:-1])
    diss = np.einsum("mi,ij,mj->m", mids, model.dissipation_matrix, mids)
    # energy supplied through the input port: e_mid^T (Q or I)^T B u
    port = _port_matrix(model)
    supply = np.einsum("mi,ij,mj->m", mids, port, u_mid) if u_mid.shape[1] else np.zeros(steps)
    balance = (H[1:] - H[:-1]) - dt * (supply - diss)
    scale = np.maximum(np.abs(H[:-1]), np.finfo(float).tiny)
    multiplier = getattr(model, "multiplier_matrix", None)
    V = (np.einsum("mi,ij,mj->m", states, multiplier, states) if multiplier is not None
         else np.full(steps + 1, np.nan))
    return Trajectory(times, states, H, V, diss, balance / scale, dt)


def _port_matrix(model) -> np.ndarray:
    Q = getattr(model, "Q", None)
    return model.input_matrix if Q is None else Q.T @ model.input_matrix


def smooth_initial_state(model, seed: Optional[int] = None) -> np.ndarray:
    """A smooth field on the degrees of freedom: a pulse, or random low modes when seeded."""
    nodes = model.mesh.nodes
    xq, xp = nodes[:-1], nodes[1:]
    ell = model.mesh.x_r - model.mesh.x_l
    sq = (xq - model.mesh.x_l) / ell
    sp = (xp - model.mesh.x_l) / ell
    if seed is None:
        q = [np.exp(-40.0 * (sq - 0.4) ** 2) for _ in range(model.n)]
        p = [np.zeros_like(sp) for _ in range(model.n)]
    else:
        rng = np.random.default_rng(seed)
        modes = np.arange(1, 6)
        q, p = [], []
        for _ in range(model.n):
            a, b = rng.normal(size=(2, modes.size)) / modes
            q.append(np.cos(np.pi * np.outer(sq, modes - 0.5)) @ a)
            p.append(np.sin(np.pi * np.outer(sp, modes - 0.5)) @ b)
    return np.concatenate(q + p)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    window: tuple
    monotone: bool
    worst_increase: float


def fit_decay_rate(traj: Trajectory, start_fraction: float = 0.5) -> DecayFit:
    """Least-squares slope of log H_d over the final part of the horizon."""
    T = traj.times[-1]
    mask = (traj.times >= start_fraction * T) & (traj.H > 0)
    if mask.sum() < 2:
        raise ValueError("not enough positive energy samples to fit a rate")
    slope, intercept = np.polyfit(traj.times[mask], np.log(traj.H[mask]), 1)
    inc = np.diff(traj.H)
    worst = float(inc.max() / traj.H[0]) if traj.H[0] > 0 and inc.size else 0.0
    return DecayFit(-float(slope), float(intercept), (start_fraction * T, T),
                    bool(worst <= 1e-10), worst)


@dataclass(frozen=True)
class MultiplierReport:
    c1_max_violation: float
    c1_violations: int
    c2_max_violation: float
    c2_violations: int
    c2_margin: float
    differencing_advisory: bool
    samples: int

    @property
    def holds(self) -> bool:
        return self.c1_violations == 0 and self.c2_violations == 0


def multiplier_trace(model, traj: Trajectory, certificate, slack: float = C2_SLACK) -> MultiplierReport:
    """Check |V_eps| <= H/eps0 and dV/dt <= -delta H - (1/eps1) dH/dt along a trajectory."""
    if np.all(np.isnan(traj.V_eps)):
        raise ValueError("trajectory carries no multiplier functional (mixed scheme only)")
    H, V, dt = traj.H, traj.V_eps, traj.dt
    c1 = np.abs(V) - H / certificate.epsilon0
    c1_scale = np.maximum(H / certificate.epsilon0, np.finfo(float).tiny)
    c1_rel = c1 / c1_scale
    if H.size < 3:
        return MultiplierReport(float(c1_rel.max()), int(np.sum(c1 > 0)), 0.0, 0, 0.0, False, H.size)
    dV = (V[2:] - V[:-2]) / (2 * dt)
    dH = (H[2:] - H[:-2]) / (2 * dt)
    Hm = H[1:-1]
    delta, eps1 = certificate.delta, certificate.epsilon1
    gap = dV + delta * Hm + dH / eps1
    scale = delta * Hm + np.abs(dH) / eps1
    tiny = np.finfo(float).tiny
    c2_rel = gap / np.maximum(scale, tiny)
    zero = scale <= tiny
    c2_rel[zero] = 0.0
    # Richardson-style estimate of the central-difference error via the 2 dt stencil
    advisory = False
    if H.size >= 5:
        dV2 = (V[4:] - V[:-4]) / (4 * dt)
        dH2 = (H[4:] - H[:-4]) / (4 * dt)
        err = (np.abs(dV[1:-1] - dV2) + np.abs(dH[1:-1] - dH2) / eps1) / 3.0
        advisory = bool(np.any(err > slack * np.maximum(scale[1:-1], tiny)))
    return MultiplierReport(
        c1_max_violation=float(c1_rel.max()),
        c1_violations=int(np.sum(c1 > 0)),
        c2_max_violation=float(c2_rel.max()),
        c2_violations=int(np.sum(c2_rel > slack)),
        c2_margin=float(-c2_rel.max()),
        differencing_advisory=advisory,
        samples=int(H.size),
    )
