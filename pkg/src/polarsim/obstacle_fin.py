"""Obstacle-type limit problem for finite cytosolic diffusion, boundary-only form.

    du/dt = Lap u - a4 (1-g) xi + ell g L_{ell g}(a4 (1-g) xi),   u >= 0,  u xi = u,

with ``ell = a6 / D`` and ``w = (ell / a6) L_{ell g}(a4 (1-g) xi)`` the trace
of the harmonic cytosolic concentration.  Writing ``a4 (1-g) xi = a4 (1-g) - mu``
with a multiplier ``mu >= 0`` supported on ``{u = 0}`` turns each implicit
Euler step into a mixed complementarity problem in ``(u, mu)``, solved by an
active-set fixed point.  Because ``L_h h = 1`` and ``L_h`` is symmetric, the
discrete mass is conserved without any extra constraint.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .lcp import LCPError
from .model import (
    BulkGrid,
    Diagnostics,
    ModelParams,
    SurfaceGrid,
    check_surface_field,
    integrate_surface,
    laplacian_matrix,
)
from .obstacle_inf import ObstacleError, support_mask
from .robin import RobinOperator, harmonic_extend
from .settings import SolverSettings


@dataclass(frozen=True)
class ObstacleStateFin:
    u: np.ndarray
    xi: np.ndarray
    w_trace: np.ndarray
    t: float = 0.0

    def w_bulk(self, bulk: BulkGrid) -> np.ndarray:
        return harmonic_extend(bulk, self.w_trace)


def _check_finite_d(params: ModelParams):
    if params.infinite_diffusion:
        raise ValueError("finite-D solver needs a finite diffusion ratio D")


def w_of(grid: SurfaceGrid, u, xi, g, params: ModelParams, support=None,
         settings: SolverSettings = SolverSettings()) -> np.ndarray:
    """Cytosolic trace ``(ell/a6) L_{X ell g}(a4 (1-g) X xi)`` with ``X`` the
    indicator of ``support`` (default: the positivity set of ``u``)."""
    _check_finite_d(params)
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    pos = support_mask(u, settings)
    A = pos if support is None else np.asarray(support, dtype=bool)
    if np.any(pos & ~A):
        raise ValueError("support set must contain the positivity set of u")
    if not A.any():
        raise ObstacleError("degenerate positivity set")
    xi = np.ones_like(u) if xi is None else np.asarray(xi, dtype=float)
    ell = params.ell
    op = RobinOperator(grid, np.where(A, ell * g, 0.0))
    return (ell / params.a6) * op.solve(np.where(A, params.a4 * (1.0 - g) * xi, 0.0))


def xi_fin_of(u, w, g, params: ModelParams, settings: SolverSettings = SolverSettings()):
    """``xi = 1`` on ``{u > 0}``, ``a6 w g / (a4 (1-g))`` elsewhere; returns ``(xi, n_clamped)``."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < -1e-12):
        raise ValueError("w must be nonnegative")
    pos = support_mask(u, settings)
    raw = params.a6 * w * g / (params.a4 * (1.0 - g))
    clamped = ~pos & (raw > 1.0 + 1e-12)
    return np.where(pos, 1.0, np.clip(raw, 0.0, 1.0)), int(clamped.sum())


def _solve_mixed(A, N, b, free, extra_mass=None, max_iter: int = 200, tol: float = 1e-13):
    """Active-set solve of ``A u - N lam = b`` with ``u, lam >= 0``, ``u lam = 0``.

    ``extra_mass = (weights, m)`` appends the mass constraint for singular
    stationary systems.  On a two-cycle the union of the competing free sets
    is frozen for one iteration.
    """
    n = b.size
    free = np.asarray(free, dtype=bool).copy()
    if not free.any():
        free[:] = True
    scale = tol * max(1.0, float(np.max(np.abs(b))))
    history: list[bytes] = []
    unions = 0
    for it in range(1, max_iter + 1):
        key = free.tobytes()
        if key in history:
            if unions > 3:
                raise LCPError("active set cycling between configurations")
            prev = np.frombuffer(history[-1], dtype=bool)
            free = free | prev
            unions += 1
            key = free.tobytes()
        history.append(key)
        # columns: u on the free set, lam on the contact set
        B = np.where(free[None, :], A, -N)
        if extra_mass is None:
            y = scipy.linalg.solve(B, b, check_finite=False)
        else:
            weights, m = extra_mass
            K = np.zeros((n + 1, n + 1))
            K[:n, :n] = B
            K[:n, n] = 1.0
            K[n, :n] = np.where(free, weights, 0.0)
            y = scipy.linalg.solve(K, np.append(b, m), check_finite=False)[:n]
        u = np.where(free, y, 0.0)
        lam = np.where(free, 0.0, y)
        new_free = (free & (u >= -scale)) | (~free & (lam < -scale))
        if not new_free.any():
            raise LCPError("active set emptied")
        if np.array_equal(new_free, free):
            u = np.maximum(u, 0.0)
            lam = np.maximum(lam, 0.0)
            return u, lam, it
        free = new_free
    raise LCPError(f"active set did not settle in {max_iter} iterations")


class ObstacleFinSolver:
    """Implicit Euler stepper for the finite-D limit problem."""

    def __init__(self, grid: SurfaceGrid, params: ModelParams, settings: SolverSettings = SolverSettings()):
        _check_finite_d(params)
        self.grid = grid
        self.params = params
        self.settings = settings
        self.lap = laplacian_matrix(grid, settings.laplacian)
        self.refactorizations = 0
        self._g_key: bytes | None = None
        self._loss: np.ndarray | None = None
        self._robin: RobinOperator | None = None

    def loss_operator(self, g) -> np.ndarray:
        """Matrix of ``s -> s - ell g L_{ell g} s``; refactorized only when ``g`` changes."""
        g = np.asarray(g, dtype=float)
        key = g.tobytes()
        if key != self._g_key:
            ell = self.params.ell
            self._robin = RobinOperator(self.grid, ell * g)
            Linv = self._robin.matrix_inverse()
            self._loss = np.eye(self.grid.n_theta) - (ell * g)[:, None] * Linv
            self._g_key = key
            self.refactorizations += 1
        return self._loss

    def w_from_xi(self, xi, g) -> np.ndarray:
        self.loss_operator(g)
        p = self.params
        return (p.ell / p.a6) * self._robin.solve(p.a4 * (1.0 - np.asarray(g)) * xi)

    def initial_state(self, u0, g, t: float = 0.0) -> ObstacleStateFin:
        u0 = check_surface_field(self.grid, u0, "u0")
        if np.any(u0 < 0):
            raise ValueError("initial data must be nonnegative")
        w = w_of(self.grid, u0, None, g, self.params, settings=self.settings)
        xi, _ = xi_fin_of(u0, w, g, self.params, self.settings)
        return ObstacleStateFin(u0.copy(), xi, w, t)

    def mass(self, state) -> float:
        return integrate_surface(self.grid, state.u)

    def step(self, state: ObstacleStateFin, dt: float, g):
        if not dt > 0:
            raise ValueError("dt must be positive")
        g = np.asarray(g, dtype=float)
        p, st = self.params, self.settings
        n_ref = self.refactorizations
        N = self.loss_operator(g)
        s0 = p.a4 * (1.0 - g)
        A = np.eye(self.grid.n_theta) - dt * self.lap
        b = state.u - dt * (N @ s0)
        u, lam, iters = _solve_mixed(A, dt * N, b, support_mask(state.u, st), max_iter=st.max_outer)
        xi = np.where(u > 0, 1.0, np.clip(1.0 - lam / s0, 0.0, 1.0))
        w = self.w_from_xi(xi, g)
        new = ObstacleStateFin(u, xi, w, state.t + dt)
        pos = support_mask(u, st)
        _, clamps = xi_fin_of(u, np.maximum(w, 0.0), g, p, st)
        # the relation holds where the zero set is stable: zero nodes whose
        # neighbours are zero and which were zero before the step
        zero = ~pos & np.roll(~pos, 1) & np.roll(~pos, -1) & ~support_mask(state.u, st)
        consistency = s0 * xi - p.a6 * g * w
        row = {
            "t": new.t,
            "mass": integrate_surface(self.grid, u),
            "min_u": float(u.min()),
            "max_u": float(u.max()),
            "support_fraction": float(pos.mean()),
            "max_w": float(w.max()),
            "min_w": float(w.min()),
            "clamp_violations": clamps,
            "outer_iterations": iters,
            "refactorizations": self.refactorizations - n_ref,
            "complementarity": float(np.max(np.abs(np.minimum(u, lam)))),
            "zero_set_consistency": float(np.max(np.abs(consistency[zero]))) if zero.any() else 0.0,
        }
        return new, row

    def run(self, state: ObstacleStateFin, dt: float, t_end: float, g, record_every: int = 1, callback=None):
        g_of_t = g if callable(g) else (lambda t, _g=np.asarray(g, dtype=float): _g)
        n_steps = int(round((t_end - state.t) / dt))
        snaps = [state]
        diag = Diagnostics()
        for n in range(1, n_steps + 1):
            state, row = self.step(state, dt, g_of_t(state.t + dt))
            diag.append(**row)
            if callback is not None:
                callback(state, row)
            if n % record_every == 0 or n == n_steps:
                snaps.append(state)
        return state, snaps, diag


def step_dfin(state: ObstacleStateFin, dt: float, g, params: ModelParams, grid: SurfaceGrid | None = None,
              settings: SolverSettings = SolverSettings()) -> ObstacleStateFin:
    grid = grid or SurfaceGrid(state.u.size)
    return ObstacleFinSolver(grid, params, settings).step(state, dt, g)[0]


def steady_residual_fin(grid: SurfaceGrid, state: ObstacleStateFin, g, params: ModelParams,
                        settings: SolverSettings = SolverSettings()) -> float:
    lap = laplacian_matrix(grid, settings.laplacian)
    g = np.asarray(g, dtype=float)
    r = lap @ state.u - params.a4 * (1.0 - g) * state.xi + params.a6 * g * state.w_trace
    return float(np.max(np.abs(r)))


def steady_dfin(grid: SurfaceGrid, m: float, g, params: ModelParams, settings: SolverSettings = SolverSettings(),
                method: str = "pseudo-time", dt: float = 1.0) -> ObstacleStateFin:
    """Stationary solution of mass ``m``, by pseudo-time stepping or a direct active-set solve."""
    if not m > 0:
        raise ValueError("mass must be positive")
    g = np.asarray(g, dtype=float)
    solver = ObstacleFinSolver(grid, params, settings)
    if method == "active-set":
        N = solver.loss_operator(g)
        s0 = params.a4 * (1.0 - g)
        u, lam, _ = _solve_mixed(-solver.lap, N, -(N @ s0), np.ones(grid.n_theta, bool),
                                 extra_mass=(grid.weights, m))
        xi = np.where(u > 0, 1.0, np.clip(1.0 - lam / s0, 0.0, 1.0))
        return ObstacleStateFin(u, xi, solver.w_from_xi(xi, g), np.inf)
    if method != "pseudo-time":
        raise ValueError(f"unknown method {method!r}")
    state = solver.initial_state(np.full(grid.n_theta, m / grid.length), g)
    for _ in range(settings.steady_max_steps):
        new, _ = solver.step(state, dt, g)
        change = integrate_surface(grid, np.abs(new.u - state.u))
        state = new
        if change < settings.steady_tol * m:
            return replace(state, t=np.inf)
    raise ObstacleError(f"steady state not reached in {settings.steady_max_steps} pseudo-steps")
