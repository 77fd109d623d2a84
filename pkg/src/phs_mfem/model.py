"""Continuous system descriptions, parameter profiles, meshes and presets.

A system is the 1D boundary-damped port-Hamiltonian model in co-energy form

    Lambda(x)^{-1} d/dt [e^q; e^p] = [[0, A], [A^T, 0]] d/dx [e^q; e^p] + [B_q; B_p] u
    e^p(x_l) = 0,    A^T e^q(x_r) = -K e^p(x_r)

with diagonal parameter matrices built from strictly positive profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

PROBE_POINTS = 1001
FD_RELATIVE_STEP = 1e-6

Scalar = Callable[[np.ndarray], np.ndarray]
InputEntry = Callable[[np.ndarray, int, int], np.ndarray]


def _zero_input(x: np.ndarray, i: int, k: int) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParamProfile:
    """A strictly positive physical parameter theta(x).

    ``sampler`` must accept numpy arrays. When ``derivative`` is absent,
    central differences are used with step ``FD_RELATIVE_STEP`` times the
    domain length.
    """

    sampler: Scalar
    derivative: Optional[Scalar] = None
    label: str = ""

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.sampler(x), dtype=float), x.shape).copy()

    def slope(self, x, length: float = 1.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.derivative is not None:
            return np.broadcast_to(np.asarray(self.derivative(x), dtype=float), x.shape).copy()
        step = length * FD_RELATIVE_STEP
        return (self(x + step) - self(x - step)) / (2.0 * step)

    def scaled(self, factor: float, label: str = "") -> "ParamProfile":
        """The profile ``factor * theta``."""
        deriv = None if self.derivative is None else (lambda x, d=self.derivative: factor * d(x))
        return ParamProfile(lambda x, s=self.sampler: factor * s(x), deriv, label or self.label)

    def reciprocal(self, factor: float = 1.0, label: str = "") -> "ParamProfile":
        """The profile ``factor / theta``."""
        s0, d0 = self.sampler, self.derivative
        deriv = None if d0 is None else (lambda x: -factor * d0(x) / s0(x) ** 2)
        return ParamProfile(lambda x: factor / s0(x), deriv, label or self.label)


def constant_profile(value: float, label: str = "") -> ParamProfile:
    return ParamProfile(
        lambda x: np.full_like(np.asarray(x, dtype=float), value),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        label,
    )


@dataclass(frozen=True)
class SystemSpec:
    """Continuous port-Hamiltonian system on [x_l, x_r].

    ``K`` must be symmetric positive definite. ``lossless()`` derives the
    undamped copy (K = 0) used for conservation checks; it is the only way
    to obtain a semidefinite dissipation matrix.
    """

    n: int
    x_l: float
    x_r: float
    A: np.ndarray
    K: np.ndarray
    theta_q: tuple
    theta_p: tuple
    b_q: InputEntry = _zero_input
    b_p: InputEntry = _zero_input
    input_dim: int = 0
    name: str = "custom"
    allow_semidefinite_damping: bool = field(default=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(np.atleast_2d(self.A)))
        object.__setattr__(self, "K", _frozen(np.atleast_2d(self.K)))
        object.__setattr__(self, "theta_q", tuple(self.theta_q))
        object.__setattr__(self, "theta_p", tuple(self.theta_p))
        self._validate()

    def _validate(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError(f"n must be a positive integer, got {n!r}")
        if not (np.isfinite(self.x_l) and np.isfinite(self.x_r) and self.x_l < self.x_r):
            raise ValueError(f"domain must satisfy x_l < x_r, got [{self.x_l}, {self.x_r}]")
        if self.A.shape != (n, n) or self.K.shape != (n, n):
            raise ValueError(f"A and K must be {n}x{n}")
        if not np.all(np.isfinite(self.A)) or 1.0 / np.linalg.cond(self.A) < 1e-12:
            raise ValueError("A must be invertible (reciprocal condition below 1e-12)")
        if not np.allclose(self.K, self.K.T, rtol=0, atol=1e-14 * max(1.0, np.abs(self.K).max())):
            raise ValueError("K must be symmetric")
        kmin = np.linalg.eigvalsh(self.K).min()
        if kmin <= 0 and not (self.allow_semidefinite_damping and kmin >= -1e-14):
            raise ValueError("K must be positive definite")
        if len(self.theta_q) != n or len(self.theta_p) != n:
            raise ValueError(f"expected {n} profiles per family")
        if self.input_dim < 0:
            raise ValueError("input_dim must be nonnegative")
        probe = self.probe_grid()
        for z, family in (("q", self.theta_q), ("p", self.theta_p)):
            for i, prof in enumerate(family):
                vals = prof(probe)
                if not np.all(np.isfinite(vals)) or vals.min() <= 0:
                    bad = int(np.argmin(np.where(np.isfinite(vals), vals, -np.inf)))
                    raise ValueError(
                        f"theta^{z}_{i + 1} must be positive on the domain "
                        f"(value {vals[bad]!r} at x={probe[bad]!r})"
                    )

    @property
    def length(self) -> float:
        return float(self.x_r - self.x_l)

    @property
    def P1(self) -> np.ndarray:
        z = np.zeros((self.n, self.n))
        return np.block([[z, self.A], [self.A.T, z]])

    def profiles(self, z: str) -> tuple:
        return self.theta_q if z == "q" else self.theta_p

    def probe_grid(self, points: int = PROBE_POINTS) -> np.ndarray:
        return np.linspace(self.x_l, self.x_r, points)

    def lossless(self) -> "SystemSpec":
        """Same system with the boundary damping removed."""
        return replace(self, K=np.zeros((self.n, self.n)), allow_semidefinite_damping=True,
                       name=self.name + "-lossless")

    def with_damping(self, K) -> "SystemSpec":
        return replace(self, K=np.atleast_2d(np.asarray(K, dtype=float)))


@dataclass(frozen=True)
class Mesh:
    """Uniform partition with N cells; nodes x_k = x_l + k h, k = 0..N."""

    N: int
    x_l: float = 0.0
    x_r: float = 1.0

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 2:
            raise ValueError(f"mesh needs N >= 2 cells, got {self.N!r}")
        if not self.x_l < self.x_r:
            raise ValueError("mesh needs x_l < x_r")

    @classmethod
    def for_spec(cls, spec: SystemSpec, N: int) -> "Mesh":
        return cls(int(N), float(spec.x_l), float(spec.x_r))

    @property
    def h(self) -> float:
        return (self.x_r - self.x_l) / self.N

    @property
    def nodes(self) -> np.ndarray:
        # k*l/N rounds once per node; the end node is pinned to x_r
        x = self.x_l + (self.x_r - self.x_l) * np.arange(self.N + 1) / self.N
        x[-1] = self.x_r
        return x

    @property
    def midpoints(self) -> np.ndarray:
        return self.x_l + (self.x_r - self.x_l) * (np.arange(self.N) + 0.5) / self.N


@dataclass(frozen=True)
class SampledParams:
    """Parameter samples at x_1..x_N; arrays are shaped (n, N)."""

    theta: dict
    theta_inv: dict

    @property
    def n(self) -> int:
        return self.theta["q"].shape[0]

    @property
    def N(self) -> int:
        return self.theta["q"].shape[1]

    def diagonal(self, z: str) -> np.ndarray:
        """Stacked diagonal of the global parameter matrix for family z."""
        return self.theta[z].reshape(-1)


def sample_params(spec: SystemSpec, mesh: Mesh) -> SampledParams:
    if not (np.isclose(mesh.x_l, spec.x_l) and np.isclose(mesh.x_r, spec.x_r)):
        raise ValueError("mesh does not cover the system domain")
    x = mesh.nodes[1:]
    theta, theta_inv = {}, {}
    for z in ("q", "p"):
        rows = np.vstack([prof(x) for prof in spec.profiles(z)])
        bad = np.argwhere(~(rows > 0) | ~np.isfinite(rows))
        if bad.size:
            i, k = bad[0]
            raise ValueError(f"nonpositive parameter sample theta^{z}_{i + 1} at node {k + 1}")
        rows.setflags(write=False)
        inv = 1.0 / rows
        inv.setflags(write=False)
        theta[z], theta_inv[z] = rows, inv
    return SampledParams(theta, theta_inv)


def cross_section(x):
    """theta(x) = (10 - x)/10, the tapered profile used by both presets."""
    return (10.0 - np.asarray(x, dtype=float)) / 10.0


def _cross_section_slope(x):
    return np.full_like(np.asarray(x, dtype=float), -0.1)


TAPER = ParamProfile(cross_section, _cross_section_slope, "(10-x)/10")


def _require_positive(**values):
    for name, v in values.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive, got {v!r}")


def make_piezo_preset(rho0=1.0, alpha0=1.0, gamma=0.5, mu0=1.0, tau0=1.0, k1=1.0, k2=1.0) -> SystemSpec:
    """Piezoelectric beam with tapered cross-section and diagonal boundary feedback."""
    _require_positive(rho0=rho0, alpha0=alpha0, mu0=mu0, tau0=tau0)
    # gamma = 0 is the uncoupled limit and remains admissible
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ValueError(f"gamma must be nonnegative, got {gamma!r}")
    return SystemSpec(
        n=2,
        x_l=0.0,
        x_r=1.0,
        A=np.array([[1.0, 0.0], [-gamma, 1.0]]),
        K=np.diag([k1, k2]),
        theta_q=(TAPER.scaled(alpha0, "theta_q1"), TAPER.scaled(1.0 / tau0, "theta_q2")),
        theta_p=(TAPER.reciprocal(1.0 / rho0, "theta_p1"), TAPER.reciprocal(1.0 / mu0, "theta_p2")),
        input_dim=0,
        name="piezo",
        allow_semidefinite_damping=(k1 == 0 or k2 == 0),
    )


def wave_actuator(x):
    """Localized actuator profile 3e4 x^2 (x - 0.1)^2 supported on [0, 0.1]."""
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0.0) & (x <= 0.1), 3e4 * x**2 * (x - 0.1) ** 2, 0.0)


def make_wave_preset(rho0=1.0, tau0=1.0, kappa1=0.5) -> SystemSpec:
    """Anisotropic wave equation with one boundary damper and one distributed input."""
    _require_positive(rho0=rho0, tau0=tau0)
    # kappa1 is the damping matrix itself, so SystemSpec validation reports it
    return SystemSpec(
        n=1,
        x_l=0.0,
        x_r=1.0,
        A=np.eye(1),
        K=np.array([[kappa1]]),
        theta_q=(TAPER.scaled(tau0, "theta_q"),),
        theta_p=(TAPER.reciprocal(1.0 / rho0, "theta_p"),),
        b_q=_zero_input,
        b_p=lambda x, i, k: wave_actuator(x),
        input_dim=1,
        name="wave",
    )


PRESETS = {"piezo": make_piezo_preset, "wave": make_wave_preset}
