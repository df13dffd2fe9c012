"""Linear complementarity solvers: find ``x >= 0`` with ``y = M x + q >= 0`` and ``x . y = 0``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class LCPError(RuntimeError):
    pass


@dataclass
class LCPResult:
    x: np.ndarray
    y: np.ndarray
    iterations: int
    residual: float


def complementarity_residual(x, y) -> float:
    """``max_j |min(x_j, y_j)|``, zero exactly at a solution."""
    return float(np.max(np.abs(np.minimum(x, y))))


def psor(M, q, x0=None, omega: float = 1.5, tol: float = 1e-10, max_sweeps: int = 100_000) -> LCPResult:
    """Projected successive over-relaxation (Cryer).

    Converges for symmetric positive definite ``M`` and ``0 < omega < 2``.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    x = np.zeros(n) if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0).copy()
    diag = np.diag(M).copy()
    if np.any(diag <= 0):
        raise LCPError("PSOR needs a positive diagonal")
    rows = [M[j] for j in range(n)]
    for sweep in range(1, max_sweeps + 1):
        for j in range(n):
            r = rows[j] @ x + q[j]
            x[j] = max(0.0, x[j] - omega * r / diag[j])
        y = M @ x + q
        res = complementarity_residual(x, y)
        if res < tol:
            return LCPResult(x, y, sweep, res)
    raise LCPError(f"PSOR did not converge in {max_sweeps} sweeps (residual {res:.3e})")


def active_set(M, q, x0=None, tol: float = 1e-13, max_iter: int = 200) -> LCPResult:
    """Primal-dual active set iteration.

    Terminates in finitely many steps for M-matrices; raises on cycling so the
    caller can fall back to :func:`psor`.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    if x0 is None:
        free = -q > 0
    else:
        free = np.asarray(x0) > 0
    seen = set()
    for it in range(1, max_iter + 1):
        key = free.tobytes()
        if key in seen:
            raise LCPError("active-set iteration cycled")
        seen.add(key)
        x = np.zeros(n)
        if free.any():
            idx = np.flatnonzero(free)
            x[idx] = scipy.linalg.solve(M[np.ix_(idx, idx)], -q[idx], check_finite=False)
        y = M @ x + q
        y[free] = 0.0
        scale = max(1.0, float(np.max(np.abs(q))))
        new_free = (free & (x >= -tol * scale)) | (~free & (y < -tol * scale))
        if np.array_equal(new_free, free):
            x = np.maximum(x, 0.0)
            y = M @ x + q
            return LCPResult(x, y, it, complementarity_residual(x, y))
        free = new_free
    raise LCPError(f"active-set iteration did not settle in {max_iter} iterations")
