"""Matrix assembly for the mixed finite-element scheme and a P1 Galerkin comparator.

State layout (both schemes): ``[e^q_1 .. e^q_n, e^p_1 .. e^p_n]`` with each
block of length N. The q-blocks hold nodes 0..N-1, the p-blocks hold nodes
1..N; the boundary values e^p(x_l) = 0 and e^q(x_r) have been eliminated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .model import Mesh, SampledParams, SystemSpec, sample_params
from .numerics import simpson_weights, sym

log = logging.getLogger(__name__)

QUAD_PANELS = 64


@dataclass(frozen=True)
class PrimitiveMatrices:
    L: np.ndarray
    M: np.ndarray
    D: np.ndarray
    C: np.ndarray
    t_r: np.ndarray

    @property
    def N(self) -> int:
        return self.L.shape[0]


def multiplier_weights(N: int) -> list:
    """Rows of C as exact rationals: {(row, col): value}."""
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    entries = {(0, 1): Fraction(1, 2)}
    for j in range(2, N):
        entries[(j - 1, j - 2)] = Fraction(-j, 2)
        entries[(j - 1, j)] = Fraction(j, 2)
    entries[(N - 1, N - 2)] = Fraction(-N)
    entries[(N - 1, N - 1)] = Fraction(N)
    return entries


def build_primitives(N: int) -> PrimitiveMatrices:
    if not isinstance(N, (int, np.integer)) or N < 2:
        raise ValueError(f"N must be at least 2, got {N!r}")
    eye = np.eye(N)
    L = np.eye(N, k=-1)
    D = eye - L
    M = 0.5 * (eye + L.T)
    C = np.zeros((N, N))
    for (r, c), v in multiplier_weights(N).items():
        C[r, c] = float(v)
    t_r = np.zeros(N)
    t_r[-1] = 1.0
    for a in (L, M, D, C, t_r):
        a.setflags(write=False)
    return PrimitiveMatrices(L, M, D, C, t_r)


def build_O(theta) -> np.ndarray:
    """Symmetric tridiagonal with (k, k+1) entry k (theta_{k+1} - theta_k) / 2."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(theta > 0):
        raise ValueError("samples must be positive")
    N = theta.size
    off = np.arange(1, N) * np.diff(theta) / 2.0
    return np.diag(off, 1) + np.diag(off, -1)


def _cell_points(mesh: Mesh, panels: int = QUAD_PANELS):
    """Simpson nodes (N, 2*panels+1) and weights scaled by h."""
    s = np.linspace(0.0, 1.0, 2 * panels + 1)
    x = mesh.nodes[:-1, None] + mesh.h * s[None, :]
    return x, mesh.h * simpson_weights(panels), s


def _input_blocks(spec: SystemSpec, mesh: Mesh, weight):
    x, w, s = _cell_points(mesh)
    blocks = {}
    for z, entry in (("q", spec.b_q), ("p", spec.b_p)):
        per_var = []
        for i in range(spec.n):
            B = np.zeros((mesh.N, spec.input_dim))
            for k in range(spec.input_dim):
                vals = np.asarray(entry(x, i, k), dtype=float)
                vals = np.broadcast_to(vals, x.shape)
                bad = np.argwhere(~np.isfinite(vals))
                if bad.size:
                    raise ValueError(f"non-finite input map b_{z}[{i + 1},{k + 1}] in cell {bad[0][0] + 1}")
                B[:, k] = (vals * weight(z, s)) @ w
            per_var.append(B)
        blocks[z] = per_var
    return blocks


@dataclass(frozen=True)
class InputQuadrature:
    blocks_q: list
    blocks_p: list

    @property
    def Bq(self) -> np.ndarray:
        return np.vstack(self.blocks_q)

    @property
    def Bp(self) -> np.ndarray:
        return np.vstack(self.blocks_p)


def input_quadrature(spec: SystemSpec, mesh: Mesh) -> InputQuadrature:
    """Cell averages (1/h) * integral of each input-map entry, composite Simpson."""
    blocks = _input_blocks(spec, mesh, lambda z, s: 1.0 / mesh.h)
    return InputQuadrature(blocks["q"], blocks["p"])


@dataclass(frozen=True)
class DofLayout:
    n: int
    N: int

    @property
    def size(self) -> int:
        return 2 * self.n * self.N

    def index(self, z: str, i: int, k: int) -> int:
        """Global row of variable (z, i), node k; i is 1-based, k a node number."""
        if not 1 <= i <= self.n:
            raise IndexError(f"variable index {i} outside 1..{self.n}")
        lo = 0 if z == "q" else 1
        if not lo <= k <= self.N - 1 + lo:
            raise IndexError(f"node {k} not a {z}-degree of freedom")
        base = 0 if z == "q" else self.n * self.N
        return base + (i - 1) * self.N + (k - lo)

    def block(self, z: str, i: int) -> slice:
        start = self.index(z, i, 0 if z == "q" else 1)
        return slice(start, start + self.N)

    def describe(self) -> list:
        rows = []
        for z, lo in (("q", 0), ("p", 1)):
            for i in range(1, self.n + 1):
                rows.extend((z, i, k) for k in range(lo, lo + self.N))
        return rows


@dataclass(frozen=True)
class GlobalMatrices:
    A: np.ndarray
    D: np.ndarray
    M: np.ndarray
    C: np.ndarray
    W: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    lam_q: np.ndarray
    lam_p: np.ndarray
    Bq: np.ndarray
    Bp: np.ndarray
    blocks_q: list
    blocks_p: list

    @property
    def Lq(self) -> np.ndarray:
        return np.diag(self.lam_q)

    @property
    def Lp(self) -> np.ndarray:
        return np.diag(self.lam_p)


def _multiplier_matrix(D: np.ndarray, C: np.ndarray, M: np.ndarray, h: float) -> np.ndarray:
    # D^T is unit upper triangular
    return -h * sla.solve_triangular(D.T, C.T @ M, lower=False, unit_diagonal=True)


def build_globals(spec: SystemSpec, mesh: Mesh, params: SampledParams | None = None) -> GlobalMatrices:
    prim = build_primitives(mesh.N)
    params = params or sample_params(spec, mesh)
    n, h = spec.n, mesh.h
    In = np.eye(n)
    Abar = np.kron(spec.A, np.eye(mesh.N))
    Dbar = np.kron(In, prim.D)
    Mbar = np.kron(In, prim.M)
    Cbar = np.kron(In, prim.C)
    B2 = np.kron(spec.K, np.outer(prim.t_r, prim.t_r))
    B1 = 0.5 * np.linalg.solve(Abar.T, B2)
    W = _multiplier_matrix(Dbar, Cbar, Mbar, h)
    quad = input_quadrature(spec, mesh)
    return GlobalMatrices(
        A=Abar, D=Dbar, M=Mbar, C=Cbar, W=W, B1=B1, B2=B2,
        lam_q=params.diagonal("q"), lam_p=params.diagonal("p"),
        Bq=quad.Bq, Bp=quad.Bp, blocks_q=quad.blocks_q, blocks_p=quad.blocks_p,
    )


class _ModelMixin:
    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def N(self) -> int:
        return self.mesh.N

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def layout(self) -> DofLayout:
        return DofLayout(self.spec.n, self.mesh.N)

    def energy(self, e) -> np.ndarray:
        """Discrete energy; accepts a state or a stack of states (rows)."""
        e = np.asarray(e, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", e, self.energy_matrix, e)

    def boundary_dissipation(self, e) -> np.ndarray:
        """sum_i kappa_i (e^p_{i,N})^2, the rate at which the boundary removes energy."""
        e = np.asarray(e, dtype=float)
        ends = [self.layout.index("p", i, self.N) for i in range(1, self.n + 1)]
        tip = e[..., ends]
        return np.einsum("...i,ij,...j->...", tip, self.spec.K, tip)

    @cached_property
    def state_matrix(self) -> np.ndarray:
        return np.linalg.solve(self.descriptor, self.dynamics)

    @cached_property
    def state_input(self) -> np.ndarray:
        return np.linalg.solve(self.descriptor, self.input_matrix)


@dataclass(frozen=True, eq=False)
class DiscreteModel(_ModelMixin):
    """S_d de/dt = (J_d - R_d) Q_d e + B_d u from the mixed scheme."""

    mesh: Mesh
    spec: SystemSpec
    glob: GlobalMatrices
    S: np.ndarray
    Q: np.ndarray
    J: np.ndarray
    R: np.ndarray
    B: np.ndarray
    scheme: str = "mfem"

    @property
    def descriptor(self) -> np.ndarray:
        return self.S

    @cached_property
    def dynamics(self) -> np.ndarray:
        return (self.J - self.R) @ self.Q

    @property
    def input_matrix(self) -> np.ndarray:
        return self.B

    @cached_property
    def energy_matrix(self) -> np.ndarray:
        return sym(self.S.T @ self.Q)

    @cached_property
    def dissipation_matrix(self) -> np.ndarray:
        """Q_d^T R_d Q_d, so that dH/dt = -e^T (this) e for u = 0."""
        return sym(self.Q.T @ self.R @ self.Q)

    @cached_property
    def multiplier_matrix(self) -> np.ndarray:
        """Symmetric V with V_eps(e) = e^T V e."""
        g, nN = self.glob, self.n * self.N
        Z = np.zeros((nN, nN))
        Ainv_T = np.linalg.inv(g.A).T
        # inverse of [[0, A], [A^T, 0]] applied to blockdiag(W^T, W)
        Y = np.block([[Z, Ainv_T @ g.W], [np.linalg.solve(g.A, g.W.T), Z]])
        return sym(-0.5 * self.h * self.S.T @ Y @ self.S)

    def unreduced_rhs(self, e, u=None) -> np.ndarray:
        """Right side (1/h)[[0, AD], [-A^T D^T, -B2]] e + B u before factoring."""
        g, nN = self.glob, self.n * self.N
        Z = np.zeros((nN, nN))
        G = np.block([[Z, g.A @ g.D], [-g.A.T @ g.D.T, -g.B2]]) / self.h
        out = G @ e
        if u is not None:
            out = out + self.B @ np.atleast_1d(u)
        return out


def _require_diagonal_damping(spec: SystemSpec):
    K = spec.K
    if np.any(np.abs(K - np.diag(np.diag(K))) > 0):
        raise ValueError("non-diagonal K is not supported by the boundary elimination; use a diagonal K")


def assemble_mfem(spec: SystemSpec, mesh: Mesh) -> DiscreteModel:
    _require_diagonal_damping(spec)
    g = build_globals(spec, mesh)
    h, nN = mesh.h, spec.n * mesh.N
    Z = np.zeros((nN, nN))
    G = np.block([[g.M, -g.B1], [Z, g.M.T]])
    lam = np.concatenate([g.lam_q, g.lam_p])
    S = G / lam[:, None]
    Q = h * G
    # M is upper bidiagonal, so M^{-1} X is a triangular solve
    Minv_DA = sla.solve_triangular(g.M, g.D.T @ g.A.T, lower=False)
    AD_MinvT = Minv_DA.T
    J = np.block([[Z, AD_MinvT], [-Minv_DA, Z]]) / h**2
    Minv_B2 = sla.solve_triangular(g.M, g.B2, lower=False)
    Rpp = sla.solve_triangular(g.M, Minv_B2.T, lower=False).T / h**2
    R = np.block([[Z, Z], [Z, sym(Rpp)]])
    B = np.vstack([g.Bq, g.Bp])
    log.debug("assembled mfem N=%d", mesh.N)
    return DiscreteModel(mesh, spec, g, S, Q, J, R, B)


@dataclass(frozen=True, eq=False)
class FemModel(_ModelMixin):
    """E dx/dt = A_fe x + B_fe u from the Galerkin comparator."""

    mesh: Mesh
    spec: SystemSpec
    E: np.ndarray
    A_fe: np.ndarray
    B_fe: np.ndarray
    scheme: str = "fem"

    @property
    def descriptor(self) -> np.ndarray:
        return self.E

    @property
    def dynamics(self) -> np.ndarray:
        return self.A_fe

    @property
    def input_matrix(self) -> np.ndarray:
        return self.B_fe

    @property
    def energy_matrix(self) -> np.ndarray:
        return self.E

    @cached_property
    def dissipation_matrix(self) -> np.ndarray:
        return -sym(self.A_fe)


def _p1_mass(mesh: Mesh, weight, gauss: int = 5) -> np.ndarray:
    """Consistent P1 mass <psi_j, weight psi_k> on nodes 0..N."""
    gx, gw = np.polynomial.legendre.leggauss(gauss)
    s = (gx + 1.0) / 2.0
    x = mesh.nodes[:-1, None] + mesh.h * s[None, :]
    wq = weight(x) * (gw * mesh.h / 2.0)
    phi = np.stack([1.0 - s, s])
    local = np.einsum("cq,aq,bq->cab", wq, phi, phi)
    Mfull = np.zeros((mesh.N + 1, mesh.N + 1))
    idx = np.arange(mesh.N)
    for a in range(2):
        for b in range(2):
            np.add.at(Mfull, (idx + a, idx + b), local[:, a, b])
    return Mfull


def assemble_fem(spec: SystemSpec, mesh: Mesh) -> FemModel:
    """Standard Galerkin model in co-energy variables.

    e^p is continuous piecewise linear (nodes 1..N after e^p(x_l) = 0).
    e^q is the cellwise-constant derivative of a piecewise-linear potential,
    i.e. the classical displacement P1 element rewritten in co-energy form.
    The right boundary condition enters through the natural boundary term.
    """
    _require_diagonal_damping(spec)
    n, N, h = spec.n, mesh.N, mesh.h
    x, w, s = _cell_points(mesh)
    mass_q = [(1.0 / spec.theta_q[i](x)) @ w for i in range(n)]
    mass_p = [_p1_mass(mesh, lambda xx, i=i: 1.0 / spec.theta_p[i](xx))[1:, 1:] for i in range(n)]
    E = sla.block_diag(*[np.diag(m) for m in mass_q], *mass_p)
    prim = build_primitives(N)
    Z = np.zeros((n * N, n * N))
    A_fe = np.block([
        [Z, np.kron(spec.A, prim.D)],
        [-np.kron(spec.A.T, prim.D.T), -np.kron(spec.K, np.outer(prim.t_r, prim.t_r))],
    ])
    # q-rows integrate against cell indicators, p-rows against hat functions
    hat_right, hat_left = s, 1.0 - s
    Bq = np.vstack(_input_blocks(spec, mesh, lambda z, s_: np.ones_like(s_))["q"])
    right = _input_blocks(spec, mesh, lambda z, s_: hat_right)["p"]
    left = _input_blocks(spec, mesh, lambda z, s_: hat_left)["p"]
    # node k (1..N) collects the rising half of cell k and the falling half of cell k+1
    Bp_blocks = []
    for r, l in zip(right, left):
        blk = r.copy()
        blk[:-1] += l[1:]
        Bp_blocks.append(blk)
    B_fe = np.vstack([Bq, np.vstack(Bp_blocks)]) if spec.input_dim else np.zeros((2 * n * N, 0))
    return FemModel(mesh, spec, E, A_fe, B_fe)


def assemble(spec: SystemSpec, N: int, scheme: str = "mfem"):
    mesh = Mesh.for_spec(spec, N)
    if scheme == "mfem":
        return assemble_mfem(spec, mesh)
    if scheme == "fem":
        return assemble_fem(spec, mesh)
    raise ValueError(f"unknown scheme {scheme!r}")
