"""Dense kernels shared by the stability and control modules."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla


class NumericsError(RuntimeError):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    vectors: Optional[np.ndarray] = None

    @property
    def abscissa(self) -> float:
        return float(np.max(self.eigenvalues.real))

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def backward_errors(self, A: np.ndarray) -> np.ndarray:
        """Per-pair ||A v - lambda v|| / (||A|| ||v||); needs ``vectors``."""
        if self.vectors is None:
            raise NumericsError("spectrum was computed without eigenvectors")
        V = self.vectors
        resid = np.linalg.norm(A @ V - V * self.eigenvalues, axis=0)
        return resid / (np.linalg.norm(A, 2) * np.linalg.norm(V, axis=0))


def eig_general(A, vectors: bool = False) -> Spectrum:
    """Eigenvalues of a dense real matrix via LAPACK's Hessenberg QR."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got shape {A.shape}")
    if A.shape[0] > 10_000:
        raise ValueError("dimension above 1e4 is outside the dense design range")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        if vectors:
            w, V = sla.eig(A, check_finite=False)
            return Spectrum(w, V)
        return Spectrum(sla.eigvals(A, check_finite=False))
    except sla.LinAlgError as exc:
        raise NumericsError(f"QR iteration did not converge (LAPACK budget 30 sweeps per eigenvalue): {exc}")


@dataclass(frozen=True)
class PDResult:
    """Outcome of a definiteness test; ``borderline`` means a pivot was numerically zero."""

    positive: bool
    borderline: bool
    index: int = -1

    def __bool__(self) -> bool:
        return self.positive


def tridiag_is_pd(diag, off, tol: float = 1e-14) -> PDResult:
    """Sturm-type definiteness test of the symmetric tridiagonal (diag, off).

    Runs the leading-minor recurrence in ratio form, d_k = a_k - b_{k-1}^2 / d_{k-1},
    where d_k is the ratio of consecutive minors. A pivot within ``tol * ||T||``
    of zero is flagged borderline and the matrix is not reported positive.
    ``index`` is the first failing row, or -1.
    """
    a = np.asarray(diag, dtype=float)
    b = np.asarray(off, dtype=float)
    if b.shape[0] != max(a.shape[0] - 1, 0):
        raise ValueError("off-diagonal must have length len(diag) - 1")
    if a.size == 0:
        return PDResult(True, False)
    absb = np.abs(b)
    row = np.abs(a).copy()
    row[:-1] += absb
    row[1:] += absb
    floor = tol * row.max()
    b2 = (b * b).tolist()
    d = 0.0
    for k, ak in enumerate(a.tolist()):
        d = ak if k == 0 else ak - b2[k - 1] / d
        if d <= floor:
            return PDResult(False, abs(d) <= floor, k)
    return PDResult(True, False)


def tridiag_from_dense(T) -> tuple:
    T = np.asarray(T, dtype=float)
    return np.diag(T).copy(), np.diag(T, 1).copy()


def solve_lyapunov(A, W) -> np.ndarray:
    """X with A^T X + X A + W = 0 for Hurwitz A (Bartels-Stewart)."""
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    W = 0.5 * (W + W.T)
    abscissa = eig_general(A).abscissa
    if abscissa >= 0:
        raise NumericsError(f"A is not Hurwitz (spectral abscissa {abscissa:.3e})")
    X = sla.solve_continuous_lyapunov(A.T, -W)
    X = 0.5 * (X + X.T)
    res = np.linalg.norm(A.T @ X + X @ A + W)
    scale = np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(W)
    if scale > 0 and res > 1e-9 * scale:
        raise NumericsError(f"Lyapunov residual {res:.3e} exceeds 1e-9 x {scale:.3e}")
    return X


def simpson_weights(panels: int) -> np.ndarray:
    """Composite Simpson weights on 2*panels+1 points of [0, 1]."""
    w = np.ones(2 * panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (6.0 * panels)


def simpson(f, a: float, b: float, panels: int = 64) -> float:
    x = np.linspace(a, b, 2 * panels + 1)
    return float((b - a) * np.dot(simpson_weights(panels), f(x)))


def sym(X) -> np.ndarray:
    return 0.5 * (X + X.T)


def thread_budget(default: int = 1) -> int:
    """Worker cap from PHS_THREADS (at least 1)."""
    raw = os.environ.get("PHS_THREADS", "").strip()
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"PHS_THREADS must be an integer, got {raw!r}") from None


def ordered_map(fn, items, threads: int | None = None) -> list:
    """map() over a thread pool; results keep input order."""
    items = list(items)
    workers = thread_budget() if threads is None else max(1, threads)
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
