"""Geometry, parameters and the spectral operators shared by every solver.

The membrane is the unit circle and the cell interior is the unit disk.
Surface fields are plain ``numpy`` arrays of length ``n_theta`` sampled at
``theta_j = 2 pi j / n_theta``; bulk fields are arrays of shape
``(n_r, n_theta)`` whose last row is the trace on the circle.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


class GridError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceGrid:
    """Uniform collocation on the unit circle."""

    n_theta: int

    def __post_init__(self):
        if not isinstance(self.n_theta, (int, np.integer)):
            raise GridError(f"n_theta must be an integer, got {self.n_theta!r}")
        if self.n_theta % 2:
            raise GridError("n_theta must be even")
        if self.n_theta < 8:
            raise GridError(f"n_theta must be >= 8, got {self.n_theta}")

    @cached_property
    def theta(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_theta) / self.n_theta

    @property
    def h(self) -> float:
        return TWO_PI / self.n_theta

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.n_theta, self.h)

    @property
    def length(self) -> float:
        """|Gamma| of the unit circle."""
        return TWO_PI

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Non-negative integer wavenumbers of the ``rfft`` layout."""
        return np.arange(self.n_theta // 2 + 1)


@dataclass(frozen=True)
class BulkGrid:
    """Radius x angle finite-volume grid on the unit disk.

    Cell faces sit at ``rho_i = i * dr`` with ``dr = 1 / (n_r - 1/2)``;
    interior nodes are cell centres and the last node is placed on ``r = 1``
    and owns the half cell ``[1 - dr/2, 1]``.
    """

    n_r: int
    n_theta: int

    def __post_init__(self):
        if not isinstance(self.n_r, (int, np.integer)) or self.n_r < 4:
            raise GridError(f"n_r must be an integer >= 4, got {self.n_r!r}")
        SurfaceGrid(self.n_theta)

    @property
    def dr(self) -> float:
        return 1.0 / (self.n_r - 0.5)

    @cached_property
    def faces(self) -> np.ndarray:
        f = self.dr * np.arange(self.n_r + 1)
        f[-1] = 1.0
        return f

    @cached_property
    def radii(self) -> np.ndarray:
        r = self.dr * (np.arange(self.n_r) + 0.5)
        r[-1] = 1.0
        return r

    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Radial cell measure per radian, ``(rho_i^2 - rho_{i-1}^2) / 2``."""
        f = self.faces
        return 0.5 * (f[1:] ** 2 - f[:-1] ** 2)

    @property
    def area(self) -> float:
        """|Omega| of the unit disk."""
        return np.pi

    @cached_property
    def surface(self) -> SurfaceGrid:
        return SurfaceGrid(self.n_theta)

    @property
    def trace_index(self) -> int:
        return self.n_r - 1


def build_grids(n_theta: int, n_r: int) -> tuple[SurfaceGrid, BulkGrid]:
    """Construct matching surface and bulk grids."""
    surface = SurfaceGrid(n_theta)
    return surface, BulkGrid(n_r, n_theta)


def check_surface_field(grid: SurfaceGrid, f, name: str = "field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_theta,):
        raise GridError(f"{name} must have shape ({grid.n_theta},), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise GridError(f"{name} contains non-finite values")
    return f


def check_bulk_field(grid: BulkGrid, f, name: str = "field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_r, grid.n_theta):
        raise GridError(f"{name} must have shape ({grid.n_r}, {grid.n_theta}), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise GridError(f"{name} contains non-finite values")
    return f


# quadrature -----------------------------------------------------------------

def integrate_surface(grid: SurfaceGrid, f) -> float:
    """Trapezoidal rule on the circle, exact for trig polynomials of degree < n_theta."""
    return float(grid.h * np.sum(f))


def integrate_bulk(grid: BulkGrid, f) -> float:
    f = np.asarray(f, dtype=float)
    return float(grid.surface.h * np.sum(grid.cell_areas[:, None] * f))


def inner(grid: SurfaceGrid, f, g) -> float:
    return float(grid.h * np.dot(f, g))


# spectral operators ---------------------------------------------------------

LAPLACIAN_KINDS = ("spectral", "fd2")


def laplacian_symbol(grid: SurfaceGrid, kind: str = "spectral") -> np.ndarray:
    """Fourier multiplier of the Laplace-Beltrami operator on the rfft modes.

    ``"spectral"`` is the exact symbol ``-k^2``.  ``"fd2"`` is the symbol of
    the periodic three-point stencil, ``-(4/h^2) sin^2(k h / 2)``; it is an
    M-matrix in nodal form, which the obstacle solvers rely on for a discrete
    maximum principle.
    """
    k = grid.wavenumbers.astype(float)
    if kind == "spectral":
        return -(k ** 2)
    if kind == "fd2":
        return -(4.0 / grid.h ** 2) * np.sin(0.5 * k * grid.h) ** 2
    raise ValueError(f"unknown Laplacian kind {kind!r}, expected one of {LAPLACIAN_KINDS}")


def apply_symbol(symbol: np.ndarray, f: np.ndarray) -> np.ndarray:
    n = f.shape[-1]
    return np.fft.irfft(symbol * np.fft.rfft(f, axis=-1), n=n, axis=-1)


def laplace_beltrami(grid: SurfaceGrid, f, kind: str = "spectral") -> np.ndarray:
    """Laplace-Beltrami operator on the unit circle, i.e. the second angular derivative."""
    return apply_symbol(laplacian_symbol(grid, kind), np.asarray(f, dtype=float))


def laplacian_matrix(grid: SurfaceGrid, kind: str = "spectral") -> np.ndarray:
    """Dense nodal matrix of :func:`laplace_beltrami`."""
    return _circulant_from_symbol(laplacian_symbol(grid, kind), grid.n_theta)


def dtn_symbol(grid: SurfaceGrid) -> np.ndarray:
    # harmonic extension of e^{ik theta} is r^|k| e^{ik theta}
    return grid.wavenumbers.astype(float)


def dtn_apply(grid: SurfaceGrid, f) -> np.ndarray:
    """Dirichlet-to-Neumann map of the unit disk: mode k is multiplied by |k|."""
    return apply_symbol(dtn_symbol(grid), np.asarray(f, dtype=float))


def dtn_matrix(grid: SurfaceGrid) -> np.ndarray:
    return _circulant_from_symbol(dtn_symbol(grid), grid.n_theta)


def _circulant_from_symbol(symbol: np.ndarray, n: int) -> np.ndarray:
    col = np.fft.irfft(symbol, n=n)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    m = col[idx]
    return 0.5 * (m + m.T)


def spectral_tail_fraction(f) -> float:
    """Share of the (non-mean) energy carried by the top third of the resolved modes."""
    c = np.abs(np.fft.rfft(np.asarray(f, dtype=float))) ** 2
    c[0] = 0.0
    total = c.sum()
    if total == 0.0:
        return 0.0
    cut = int(math.ceil(2 * len(c) / 3))
    return float(c[cut:].sum() / total)


def check_band_limit(f, name: str = "field", threshold: float = 1e-6) -> float:
    frac = spectral_tail_fraction(f)
    if frac > threshold:
        warnings.warn(
            f"{name}: top third of the spectrum carries {frac:.2e} of the energy",
            RuntimeWarning,
            stacklevel=2,
        )
    return frac


# model data -----------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Rate constants and scalings of the (rescaled) bulk-surface model.

    ``D = math.inf`` selects the infinite cytosolic diffusion (shadow) model.
    """

    a1: float = 0.0
    a2: float = 0.0
    a3: float = 1.0
    a4: float = 1.0
    a5: float = 1.0
    a6: float = 1.0
    D: float = math.inf
    eps: float = 0.1
    m: float = 1.0
    c0: float = 0.5

    def __post_init__(self):
        if self.a1 < 0 or self.a2 < 0:
            raise ParameterError("a1 and a2 must be nonnegative")
        for name in ("a3", "a4", "a5", "a6"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if not (self.D >= 1):
            raise ParameterError(f"D must be >= 1 or infinite, got {self.D}")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if not self.m > 0:
            raise ParameterError("total mass m must be positive")
        if not self.c0 > 0:
            raise ParameterError("c0 must be positive")

    @property
    def infinite_diffusion(self) -> bool:
        return math.isinf(self.D)

    @property
    def ell(self) -> float:
        return 0.0 if self.infinite_diffusion else self.a6 / self.D


SIGNAL_KINDS = ("constant", "angular-bump", "time-modulated-bump")


@dataclass(frozen=True)
class SignalSpec:
    """External signal ``c(theta, t)``.

    ``constant`` gives ``c = level``; the bump kinds give
    ``c0 + amplitude * exp(-(theta - center)^2 / width^2)`` (periodized), the
    time-modulated one with ``amplitude * (1 + beta sin(2 pi t / period))``.
    """

    kind: str = "angular-bump"
    c0: float = 0.5
    level: float = 1.0
    amplitude: float = 2.0
    center: float = 0.0
    width: float = 0.8
    beta: float = 0.5
    period: float = 1.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ParameterError(f"unknown signal kind {self.kind!r}")
        if not self.c0 > 0:
            raise ParameterError("signal floor c0 must be positive")
        if self.kind == "constant" and self.level < self.c0:
            raise ParameterError("constant signal level must be >= c0")
        if self.kind != "constant":
            if self.amplitude < 0:
                raise ParameterError("bump amplitude must be nonnegative")
            if not self.width > 0:
                raise ParameterError("bump width must be positive")
        if self.kind == "time-modulated-bump":
            if not 0 <= self.beta <= 1:
                raise ParameterError("modulation depth beta must lie in [0, 1]")
            if not self.period > 0:
                raise ParameterError("modulation period must be positive")

    @property
    def time_dependent(self) -> bool:
        return self.kind == "time-modulated-bump"

    def evaluate(self, grid: SurfaceGrid, t: float = 0.0) -> np.ndarray:
        theta = grid.theta
        if self.kind == "constant":
            return np.full(grid.n_theta, float(self.level))
        amp = self.amplitude
        if self.kind == "time-modulated-bump":
            amp = amp * (1.0 + self.beta * np.sin(TWO_PI * t / self.period))
        bump = np.zeros_like(theta)
        # periodize with enough images for any width used in practice
        for shift in (-2, -1, 0, 1, 2):
            d = theta - self.center + shift * TWO_PI
            bump += np.exp(-(d ** 2) / self.width ** 2)
        return self.c0 + amp * bump


def eval_g(c, a5: float) -> np.ndarray:
    """Activation fraction ``g = c / (c + a5)``; requires a strictly positive signal."""
    c = np.asarray(c, dtype=float)
    if not a5 > 0:
        raise ParameterError("a5 must be positive")
    bad = np.flatnonzero(~(c > 0))
    if bad.size:
        raise ParameterError(f"signal below positive floor at node {int(bad[0])}")
    return c / (c + a5)


@dataclass
class Diagnostics:
    """Append-only per-step diagnostic rows."""

    rows: list[dict] = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)
