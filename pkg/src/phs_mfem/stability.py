"""Exponential-stability certificates and spectral-abscissa sweeps."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import assemble, build_O
from .model import Mesh, SampledParams, SystemSpec, sample_params
from .numerics import Spectrum, eig_general, ordered_map, tridiag_is_pd

BISECTION_TOL = 1e-8
STRICT_FACTOR = 1.0 - 1e-9


@dataclass(frozen=True)
class StabilityCertificate:
    """Decay-rate certificate alpha = delta eps eps0 / (eps + eps0)."""

    delta: float
    epsilon0: float
    epsilon1: float
    epsilon_used: float
    alpha: float
    method: str
    details: dict = field(default_factory=dict)

    @property
    def lyapunov_epsilon(self) -> float:
        """Multiplier weight kept strictly inside the admissible interval."""
        return self.epsilon_used * STRICT_FACTOR

    @property
    def certified(self) -> bool:
        return self.delta > 0 and self.alpha > 0


@dataclass(frozen=True)
class ContinuousDelta:
    delta: float
    margins: dict
    argmin: dict

    @property
    def holds(self) -> bool:
        return self.delta > 0


def continuous_delta(spec: SystemSpec, grid_points: int = 1001) -> ContinuousDelta:
    """Infimum of (theta - m theta') / theta over a probe grid and all parameters."""
    if grid_points < 1000:
        raise ValueError("the probe grid needs at least 1e3 points")
    x = spec.probe_grid(grid_points)
    m = x - spec.x_l
    margins, where = {}, {}
    for z in ("q", "p"):
        for i, prof in enumerate(spec.profiles(z), start=1):
            th = prof(x)
            if np.any(th <= 0):
                raise ValueError(f"theta^{z}_{i} is not positive on the probe grid")
            ratio = (th - m * prof.slope(x, spec.length)) / th
            k = int(np.argmin(ratio))
            margins[(z, i)] = float(ratio[k])
            where[(z, i)] = float(x[k])
    return ContinuousDelta(min(margins.values()), margins, where)


def mesh_margin(theta, tol: float = BISECTION_TOL) -> float:
    """Largest c in (0, 1) with (1 - c) diag(theta) - O positive definite, by bisection."""
    theta = np.asarray(theta, dtype=float)
    off = -np.diag(build_O(theta), 1)

    def pd(c):
        return tridiag_is_pd((1.0 - c) * theta, off).positive

    if not pd(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pd(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class DiscreteDelta:
    delta: float
    margins: dict
    diagnosis: str = ""

    @property
    def holds(self) -> bool:
        return self.delta > 0


def discrete_delta(samples: SampledParams, tol: float = BISECTION_TOL) -> DiscreteDelta:
    """Per-mesh margin: min over parameters of the bisected supremum of c."""
    margins = {}
    for z in ("q", "p"):
        for i in range(samples.n):
            margins[(z, i + 1)] = mesh_margin(samples.theta[z][i], tol)
    delta = min(margins.values())
    diagnosis = ""
    if delta <= 0:
        bad = [f"theta^{z}_{i}" for (z, i), c in margins.items() if c <= 0]
        diagnosis = "no c > 0 makes (1-c)Lambda - O positive definite for " + ", ".join(bad)
    return DiscreteDelta(delta, margins, diagnosis)


def asymptotic_margin(spec: SystemSpec, grid_points: int = 1001) -> float:
    """Large-N limit of the per-mesh margin: 1 - max over x of m |theta'| / theta.

    The normalized matrix Lambda^{-1/2} O Lambda^{-1/2} is a Jacobi matrix with
    slowly varying off-diagonal m theta' / (2 theta), whose top eigenvalue tends
    to twice the largest off-diagonal magnitude.
    """
    x = spec.probe_grid(grid_points)
    m = x - spec.x_l
    worst = 0.0
    for z in ("q", "p"):
        for prof in spec.profiles(z):
            worst = max(worst, float(np.max(m * np.abs(prof.slope(x, spec.length)) / prof(x))))
    return 1.0 - worst


@dataclass(frozen=True)
class UniformDelta:
    delta: float
    per_mesh: dict
    limit: float


def uniform_delta(spec: SystemSpec, N_min: int, levels: int = 4, tol: float = BISECTION_TOL) -> UniformDelta:
    """Mesh-independent margin valid for every N >= N_min.

    Taken as the smaller of the per-mesh margins on the doubling sweep
    N_min, 2 N_min, ... and their large-N limit. For profiles whose margin
    decreases monotonically in N, as for the tapered presets, this is the
    infimum over all admissible meshes.
    """
    per_mesh = {}
    N = int(N_min)
    for _ in range(levels):
        per_mesh[N] = discrete_delta(sample_params(spec, Mesh.for_spec(spec, N)), tol).delta
        N *= 2
    limit = asymptotic_margin(spec)
    return UniformDelta(min(min(per_mesh.values()), limit), per_mesh, limit)


@dataclass(frozen=True)
class D1Result:
    holds: bool
    worst_index: int
    worst_ratio: float
    bound: float

    def __bool__(self) -> bool:
        return self.holds


def check_D1(theta, c: float) -> D1Result:
    """i^2 (theta_{i+1} - theta_i)^2 / ((1-c)^2 theta_{i+1} theta_i) < 1 / cos^2(pi/(N+1))."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    theta = np.asarray(theta, dtype=float)
    N = theta.size
    i = np.arange(1, N)
    lhs = i**2 * np.diff(theta) ** 2 / ((1.0 - c) ** 2 * theta[1:] * theta[:-1])
    bound = 1.0 / math.cos(math.pi / (N + 1)) ** 2
    k = int(np.argmax(lhs)) if lhs.size else 0
    worst = float(lhs[k]) if lhs.size else 0.0
    return D1Result(bool(np.all(lhs < bound)), k + 1, worst, bound)


@dataclass(frozen=True)
class D2Result:
    holds: bool
    lhs: float
    rhs: float
    advisory: bool = True


def check_D2(theta, c: float) -> D2Result:
    """The second tridiagonal test, evaluated exactly as printed (advisory only)."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    theta = np.asarray(theta, dtype=float)
    N = theta.size
    s = 1.0 - c
    odd = s * theta[0::2].min()
    even = s * theta[1::2].min() if N > 1 else odd
    # sum over pairs i < k of (theta_i - theta_k)^2
    pairs = N * np.sum(theta**2) - np.sum(theta) ** 2
    lhs = 8.0 / (N * (N - 1)) * odd * even - s**2 * pairs
    rhs = float(np.sum(np.arange(1, N) ** 2 * np.diff(theta) ** 2))
    return D2Result(bool(lhs < rhs), float(lhs), rhs)


def decay_bound(spec: SystemSpec, delta: float, method: str = "assumption1-grid",
                grid_points: int = 1001, details: Optional[dict] = None) -> StabilityCertificate:
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta!r}")
    x = spec.probe_grid(grid_points)
    eta_lambda = min(float(prof(x).min()) for z in ("q", "p") for prof in spec.profiles(z))
    P1 = spec.P1
    P1inv = np.linalg.inv(P1)
    mu_P1 = math.sqrt(float(np.linalg.eigvalsh(P1inv @ P1inv).max()))
    lam_q_r = np.array([float(p(spec.x_r)) for p in spec.theta_q])
    lam_p_r = np.array([float(p(spec.x_r)) for p in spec.theta_p])
    if np.any(lam_q_r <= 0) or np.any(lam_p_r <= 0):
        raise ValueError("Lambda(x_r) is singular")
    AinvT_K = np.linalg.solve(spec.A.T, spec.K)
    Psi = AinvT_K.T @ np.diag(1.0 / lam_q_r) @ AinvT_K + np.diag(1.0 / lam_p_r)
    mu_psi = float(np.linalg.eigvalsh(0.5 * (Psi + Psi.T)).max())
    eta_K = float(np.linalg.eigvalsh(spec.K).min())
    ell = spec.length
    eps0 = eta_lambda / (ell * mu_P1)
    eps1 = max(2.0 * eta_K / (ell * mu_psi), 0.0)
    eps = min(eps0, eps1)
    alpha = delta * eps * eps0 / (eps + eps0) if eps > 0 else 0.0
    info = dict(eta_lambda=eta_lambda, mu_P1=mu_P1, mu_psi=mu_psi, eta_K=eta_K, Psi=Psi)
    info.update(details or {})
    return StabilityCertificate(delta, eps0, eps1, eps, alpha, method, info)


def continuous_certificate(spec: SystemSpec) -> StabilityCertificate:
    cd = continuous_delta(spec)
    if not cd.holds:
        raise ValueError(f"the continuous margin condition fails on the probe grid (delta^c = {cd.delta:.6g})")
    return decay_bound(spec, min(cd.delta, 1.0), "assumption1-grid", details={"margins": cd.margins})


def discrete_certificate(spec: SystemSpec, N: int) -> StabilityCertificate:
    """Certificate for meshes with at least N cells, from the mesh-uniform margin."""
    samples = sample_params(spec, Mesh.for_spec(spec, N))
    mesh_value = discrete_delta(samples)
    uni = uniform_delta(spec, N)
    if uni.delta <= 0:
        raise ValueError(f"no uniform discrete margin: {mesh_value.diagnosis or 'limit margin is nonpositive'}")
    d1 = {key: check_D1(samples.theta[key[0]][key[1] - 1], uni.delta).holds
          for key in mesh_value.margins}
    return decay_bound(spec, min(uni.delta, 1.0), "bisection-pd", details={
        "delta_mesh": mesh_value.delta,
        "margins": mesh_value.margins,
        "per_mesh": uni.per_mesh,
        "limit": uni.limit,
        "D1": d1,
    })


@dataclass(frozen=True)
class LargeNResult:
    N_star: Optional[int]
    target: float
    history: dict


def large_n_search(spec: SystemSpec, N_start: int = 4, N_max: int = 2**14, rel: float = 1e-3) -> LargeNResult:
    """First N on a doubling sweep with per-mesh margin at least delta^c (1 - rel)."""
    cd = continuous_delta(spec)
    if not cd.holds:
        raise ValueError("the continuous margin condition does not hold")
    target = cd.delta * (1.0 - rel)
    history = {}
    N = N_start
    while N <= N_max:
        history[N] = discrete_delta(sample_params(spec, Mesh.for_spec(spec, N))).delta
        if history[N] >= target:
            return LargeNResult(N, target, history)
        N *= 2
    return LargeNResult(None, target, history)


def spectral_abscissa(model, gain: Optional[np.ndarray] = None, vectors: bool = False) -> Spectrum:
    """Spectrum of the model's state matrix, or of A - B K for a state-feedback gain."""
    try:
        A = model.state_matrix
    except np.linalg.LinAlgError as exc:
        raise ValueError("descriptor matrix is singular") from exc
    if gain is not None:
        A = A - model.state_input @ np.atleast_2d(gain)
    return eig_general(A, vectors=vectors)


@dataclass(frozen=True)
class SweepRow:
    N: int
    sigma_max_open: float
    sigma_max_closed: Optional[float]
    alpha_bound: float
    delta_d: float
    delta_mesh: float
    wallclock: float


@dataclass(frozen=True)
class SweepResult:
    scheme: str
    rows: list

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def as_table(self) -> tuple:
        header = ["N", "sigma_max_open", "sigma_max_closed", "alpha_bound", "delta_d", "delta_mesh", "wallclock"]
        rows = [[getattr(r, h) if getattr(r, h) is not None else float("nan") for h in header] for r in self.rows]
        return header, rows


def stability_sweep(spec: SystemSpec, N_list, scheme: str = "mfem",
                    gain: Optional[Callable] = None, threads: Optional[int] = None) -> SweepResult:
    """One row per N: open-loop abscissa, optional closed loop, and the certificate.

    ``gain`` maps an assembled model to a state-feedback matrix.
    """
    N_list = [int(N) for N in N_list]
    if not N_list or N_list != sorted(N_list):
        raise ValueError("N_list must be nonempty and ascending")

    def row(N):
        t0 = time.perf_counter()
        model = assemble(spec, N, scheme)
        open_ = spectral_abscissa(model).abscissa
        closed = None
        if gain is not None:
            closed = spectral_abscissa(model, gain(model)).abscissa
        mesh_d = discrete_delta(sample_params(spec, model.mesh)).delta
        uni = uniform_delta(spec, N).delta
        alpha = decay_bound(spec, min(uni, 1.0)).alpha if uni > 0 else 0.0
        return SweepRow(N, open_, closed, alpha, uni, mesh_d, time.perf_counter() - t0)

    return SweepResult(scheme, ordered_map(row, N_list, threads))
