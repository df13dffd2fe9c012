"""Harmonic Robin problems reduced to the boundary.

For ``h >= 0`` with ``|{h > 0}| > 0`` the operator ``L_h`` maps a boundary
source ``s`` to the trace of the harmonic ``z`` with ``dz/dn + h z = s``.
On the unit disk the Neumann data of a harmonic function is the
Dirichlet-to-Neumann map of its trace, so ``L_h s`` solves the dense
``n_theta x n_theta`` system ``(DtN + diag(h)) z = s`` exactly.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .model import BulkGrid, SurfaceGrid, check_surface_field, dtn_matrix


class RobinError(ValueError):
    pass


_DTN_CACHE: dict[int, np.ndarray] = {}


def _dtn(grid: SurfaceGrid) -> np.ndarray:
    m = _DTN_CACHE.get(grid.n_theta)
    if m is None:
        m = dtn_matrix(grid)
        m.setflags(write=False)
        _DTN_CACHE[grid.n_theta] = m
    return m


class RobinOperator:
    """Factorized boundary system ``DtN + diag(h)``.

    Instances are immutable after construction and may be shared between
    threads; :meth:`solve` does not modify the factorization.
    """

    def __init__(self, grid: SurfaceGrid, h):
        h = check_surface_field(grid, h, "h")
        neg = np.flatnonzero(h < 0)
        if neg.size:
            raise RobinError(f"h negative at node {int(neg[0])}")
        if not h.max() > 0:
            raise RobinError("h vanishes identically")
        self.grid = grid
        self.h = h.copy()
        self.h.setflags(write=False)
        self.matrix = _dtn(grid) + np.diag(self.h)
        self._lu = scipy.linalg.lu_factor(self.matrix, check_finite=False)

    def solve(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        z = scipy.linalg.lu_solve(self._lu, s, check_finite=False)
        if not np.all(np.isfinite(z)):
            raise RobinError("singular Robin system")
        return z

    __call__ = solve

    def residual(self, z, s) -> float:
        return float(np.max(np.abs(self.matrix @ z - s)))

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def matrix_inverse(self) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, np.eye(self.grid.n_theta), check_finite=False)


def lh_build(grid: SurfaceGrid, h) -> RobinOperator:
    return RobinOperator(grid, h)


def lh_solve(op: RobinOperator, s) -> np.ndarray:
    """Boundary trace of ``L_h s``."""
    return op.solve(s)


def harmonic_extend(grid: BulkGrid, trace) -> np.ndarray:
    """Harmonic extension of a boundary trace onto the bulk grid (mode k -> r^|k|)."""
    trace = check_surface_field(grid.surface, trace, "trace")
    coef = np.fft.rfft(trace)
    k = grid.surface.wavenumbers
    radial = grid.radii[:, None] ** k[None, :]
    return np.fft.irfft(radial * coef[None, :], n=grid.n_theta, axis=1)


def harmonic_residual(grid: BulkGrid, field) -> float:
    """Relative size of the non-harmonic part of a bulk field.

    Each angular mode of a harmonic function regular at the origin is
    ``c_k r^|k|``; the residual is the largest deviation from the best such fit.
    """
    coef = np.fft.rfft(np.asarray(field, dtype=float), axis=1)
    k = grid.surface.wavenumbers
    basis = grid.radii[:, None] ** k[None, :]
    fit = coef[-1][None, :] * basis
    scale = max(1.0, float(np.max(np.abs(coef))))
    return float(np.max(np.abs(coef - fit)) / scale)
