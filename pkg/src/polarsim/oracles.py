"""Dense reference solvers that avoid the FFT route used by the library operators."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .model import SurfaceGrid


def harmonic_basis(grid: SurfaceGrid):
    """Nodal values and normal derivatives at ``r = 1`` of the harmonic
    polynomials ``1, r^k cos k theta, r^k sin k theta`` spanning the grid."""
    n = grid.n_theta
    th = grid.theta
    vals, dn = [np.ones(n)], [np.zeros(n)]
    for k in range(1, n // 2 + 1):
        vals.append(np.cos(k * th))
        dn.append(k * np.cos(k * th))
        if k < n // 2:
            vals.append(np.sin(k * th))
            dn.append(k * np.sin(k * th))
    return np.column_stack(vals), np.column_stack(dn)


def dtn_collocation(grid: SurfaceGrid, f) -> np.ndarray:
    V, N = harmonic_basis(grid)
    coef = scipy.linalg.solve(V, np.asarray(f, dtype=float))
    return N @ coef


def robin_collocation(grid: SurfaceGrid, h, s) -> np.ndarray:
    """Boundary trace of the harmonic ``z`` with ``dz/dn + h z = s``."""
    V, N = harmonic_basis(grid)
    M = N + np.asarray(h, dtype=float)[:, None] * V
    coef = scipy.linalg.solve(M, np.asarray(s, dtype=float))
    return V @ coef
