"""Obstacle-type limit problem for infinite cytosolic diffusion.

    du/dt - Lap u = -a4 (1-g) xi + alpha g,   u >= 0,  u xi = u,  0 <= xi <= 1,

with the scalar multiplier ``alpha(t)`` fixed by conservation of ``int u``.
Time stepping is implicit Euler; each step is a linear complementarity
problem coupled to the scalar mass constraint.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from . import lcp
from .model import Diagnostics, SurfaceGrid, check_surface_field, integrate_surface, laplacian_matrix
from .settings import SolverSettings


class ObstacleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleStateInf:
    u: np.ndarray
    xi: np.ndarray
    alpha: float
    t: float = 0.0


def support_mask(u, settings: SolverSettings = SolverSettings()) -> np.ndarray:
    return np.asarray(u) > settings.threshold(u)


def alpha_of(grid: SurfaceGrid, u, g, a4: float, support=None, xi=None,
             settings: SolverSettings = SolverSettings()) -> float:
    """Multiplier from the solvability condition, ``a4 int_A (1-g) xi / int_A g``.

    ``support`` must contain the positivity set of ``u``; it defaults to that
    set.  Without ``xi`` the weight is 1, which is only correct on ``{u > 0}``.
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    pos = support_mask(u, settings)
    A = pos if support is None else np.asarray(support, dtype=bool)
    if np.any(pos & ~A):
        raise ValueError("support set must contain the positivity set of u")
    den = integrate_surface(grid, np.where(A, g, 0.0))
    if not den > 0:
        raise ObstacleError("degenerate positivity set")
    weight = 1.0 if xi is None else np.asarray(xi, dtype=float)
    num = integrate_surface(grid, np.where(A, (1.0 - g) * weight, 0.0))
    return a4 * num / den


def xi_of(u, alpha: float, g, a4: float, settings: SolverSettings = SolverSettings()):
    """Representation formula for ``xi``; returns ``(xi, n_clamped)``.

    Off the positivity set ``xi = alpha g / (a4 (1-g))``; values above one
    violate ``alpha g <= a4 (1-g)`` and are clamped.
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    pos = support_mask(u, settings)
    raw = alpha * g / (a4 * (1.0 - g))
    clamped = ~pos & (raw > 1.0 + 1e-12)
    xi = np.where(pos, 1.0, np.clip(raw, 0.0, 1.0))
    return xi, int(clamped.sum())


def solve_mass_constrained_lcp(A, b, c, weights, m, free, tol: float = 1e-13, max_iter: int = 200):
    """Active-set solve of ``A u - alpha c - lam = b``, ``weights . u = m``,
    ``u >= 0``, ``lam >= 0``, ``u lam = 0`` for ``(u, alpha, lam)``.

    ``free`` is the initial guess of ``{u > 0}``.  Returns
    ``(u, alpha, lam, iterations)``.
    """
    n = b.size
    free = np.asarray(free, dtype=bool).copy()
    if not free.any():
        free[:] = True
    scale = tol * max(1.0, float(np.max(np.abs(b))), float(np.max(np.abs(c))))
    seen = set()
    for it in range(1, max_iter + 1):
        key = free.tobytes()
        if key in seen:
            raise lcp.LCPError("mass-constrained active set cycled")
        seen.add(key)
        idx = np.flatnonzero(free)
        k = idx.size
        K = np.empty((k + 1, k + 1))
        K[:k, :k] = A[np.ix_(idx, idx)]
        K[:k, k] = -c[idx]
        K[k, :k] = weights[idx]
        K[k, k] = 0.0
        rhs = np.append(b[idx], m)
        sol = scipy.linalg.solve(K, rhs, check_finite=False)
        u = np.zeros(n)
        u[idx] = sol[:k]
        alpha = float(sol[k])
        lam = A @ u - alpha * c - b
        lam[free] = 0.0
        new_free = (free & (u >= -scale)) | (~free & (lam < -scale))
        if not new_free.any():
            raise lcp.LCPError("active set emptied")
        if np.array_equal(new_free, free):
            u = np.maximum(u, 0.0)
            lam = np.maximum(A @ u - alpha * c - b, 0.0)
            lam[u > 0] = 0.0
            return u, alpha, lam, it
        free = new_free
    raise lcp.LCPError(f"mass-constrained active set did not settle in {max_iter} iterations")


class ObstacleInfSolver:
    """Implicit Euler stepper with cached system matrices."""

    def __init__(self, grid: SurfaceGrid, a4: float = 1.0, settings: SolverSettings = SolverSettings()):
        if not a4 > 0:
            raise ValueError("a4 must be positive")
        self.grid = grid
        self.a4 = float(a4)
        self.settings = settings
        self.lap = laplacian_matrix(grid, settings.laplacian)
        self._systems: dict[float, np.ndarray] = {}

    def system(self, dt: float) -> np.ndarray:
        A = self._systems.get(dt)
        if A is None:
            A = np.eye(self.grid.n_theta) - dt * self.lap
            self._systems[dt] = A
        return A

    def initial_state(self, u0, g, t: float = 0.0) -> ObstacleStateInf:
        u0 = check_surface_field(self.grid, u0, "u0")
        if np.any(u0 < 0):
            raise ValueError("initial data must be nonnegative")
        alpha = alpha_of(self.grid, u0, g, self.a4, settings=self.settings)
        xi, _ = xi_of(u0, alpha, g, self.a4, self.settings)
        return ObstacleStateInf(u0.copy(), xi, alpha, t)

    def mass(self, state: ObstacleStateInf) -> float:
        return integrate_surface(self.grid, state.u)

    def step(self, state: ObstacleStateInf, dt: float, g, m: float | None = None):
        """Advance one implicit Euler step; returns ``(new_state, diagnostics_row)``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        g = np.asarray(g, dtype=float)
        grid, a4, st = self.grid, self.a4, self.settings
        if m is None:
            m = self.mass(state)
        A = self.system(dt)
        b = state.u - dt * a4 * (1.0 - g)
        c = dt * g
        free0 = support_mask(state.u, st)
        sweeps = 0
        if st.lcp == "active-set":
            try:
                u, alpha, lam, iters = solve_mass_constrained_lcp(A, b, c, grid.weights, m, free0)
            except lcp.LCPError:
                u, alpha, lam, iters, sweeps = self._psor_step(A, b, c, m, state.u, g)
        else:
            u, alpha, lam, iters, sweeps = self._psor_step(A, b, c, m, state.u, g)
        xi = 1.0 - lam / (dt * a4 * (1.0 - g))
        xi[u > 0] = 1.0
        xi = np.clip(xi, 0.0, 1.0)
        new = ObstacleStateInf(u, xi, alpha, state.t + dt)
        return new, self._diagnostics(state, new, dt, g, lam, iters, sweeps)

    def _psor_step(self, A, b, c, m, u_prev, g):
        """Bracketed root-find on alpha around PSOR solves, then an exact polish."""
        st, grid = self.settings, self.grid
        cache = {"x": u_prev.copy(), "sweeps": 0}

        def solve(alpha):
            res = lcp.psor(A, -(b + alpha * c), x0=cache["x"], omega=st.psor_omega,
                           tol=st.psor_tol, max_sweeps=st.psor_max_sweeps)
            cache["x"] = res.x
            cache["sweeps"] += res.iterations
            return res.x

        def excess(alpha):
            return integrate_surface(grid, solve(alpha)) - m

        lo, hi = 0.0, self.a4 * float(np.max((1.0 - g) / g))
        f_lo, f_hi = excess(lo), excess(hi)
        if f_lo > 0 or f_hi < 0:
            raise ObstacleError(f"alpha bracket failed: excess({lo})={f_lo:.3e}, excess({hi})={f_hi:.3e}")
        alpha = scipy.optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        x = solve(alpha)
        try:
            u, alpha, lam, iters = solve_mass_constrained_lcp(A, b, c, grid.weights, m, x > st.threshold(x))
        except lcp.LCPError:
            u = x
            lam = np.maximum(A @ u - alpha * c - b, 0.0)
            iters = 0
        return u, alpha, lam, iters, cache["sweeps"]

    def _diagnostics(self, old, new, dt, g, lam, iters, sweeps) -> dict:
        grid, a4, st = self.grid, self.a4, self.settings
        pos = support_mask(new.u, st)
        _, clamps = xi_of(new.u, new.alpha, g, a4, st)
        alpha_xi = alpha_of(grid, new.u, g, a4, support=np.ones_like(pos), xi=new.xi, settings=st)
        alpha_set = alpha_of(grid, new.u, g, a4, settings=st)
        zero_old = ~support_mask(old.u, st)
        interior = ~pos & np.roll(~pos, 1) & np.roll(~pos, -1) & zero_old
        incr = np.abs(new.u - old.u)[interior] / dt
        return {
            "t": new.t,
            "mass": integrate_surface(grid, new.u),
            "alpha": new.alpha,
            "min_u": float(new.u.min()),
            "max_u": float(new.u.max()),
            "support_fraction": float(pos.mean()),
            "clamp_violations": clamps,
            "lcp_iterations": iters,
            "psor_sweeps": sweeps,
            "complementarity": float(np.max(np.abs(np.minimum(new.u, lam / dt)))),
            "alpha_xi_weighted": alpha_xi,
            "alpha_support": alpha_set,
            "stampacchia": float(incr.max()) if incr.size else 0.0,
            "support_changed": bool(np.any(pos != ~zero_old)),
        }

    def run(self, state: ObstacleStateInf, dt: float, t_end: float, g, record_every: int = 1,
            callback=None):
        """Integrate to ``t_end``.  ``g`` is an array or a callable of time.

        Returns ``(final_state, snapshots, diagnostics)`` where snapshots are
        the states at every ``record_every``-th step (including the start).
        """
        g_of_t = g if callable(g) else (lambda t, _g=np.asarray(g, dtype=float): _g)
        m = self.mass(state)
        n_steps = int(round((t_end - state.t) / dt))
        snaps = [state]
        diag = Diagnostics()
        for n in range(1, n_steps + 1):
            t_new = state.t + dt
            state, row = self.step(state, dt, g_of_t(t_new), m)
            diag.append(**row)
            if callback is not None:
                callback(state, row)
            if n % record_every == 0 or n == n_steps:
                snaps.append(state)
        return state, snaps, diag


def step_dinf(state: ObstacleStateInf, dt: float, g, a4: float, grid: SurfaceGrid | None = None,
              settings: SolverSettings = SolverSettings()) -> ObstacleStateInf:
    grid = grid or SurfaceGrid(state.u.size)
    return ObstacleInfSolver(grid, a4, settings).step(state, dt, g)[0]


def steady_residual(grid: SurfaceGrid, state: ObstacleStateInf, g, a4: float,
                    settings: SolverSettings = SolverSettings()) -> float:
    """Sup-norm residual of the stationary problem on the positivity set,
    plus any violation of ``alpha g <= a4 (1-g)`` on its complement."""
    lap = laplacian_matrix(grid, settings.laplacian)
    r = lap @ state.u - a4 * (1.0 - g) + state.alpha * g
    pos = support_mask(state.u, settings)
    res_pos = float(np.max(np.abs(r[pos])))
    res_zero = float(np.max(np.maximum(r[~pos], 0.0))) if (~pos).any() else 0.0
    return max(res_pos, res_zero)


def steady_dinf(grid: SurfaceGrid, m: float, g, a4: float = 1.0, settings: SolverSettings = SolverSettings(),
                method: str = "pseudo-time", dt: float = 1.0) -> ObstacleStateInf:
    """Stationary solution with mass ``m``.

    ``pseudo-time`` iterates implicit Euler steps from the uniform state;
    ``active-set`` solves the stationary complementarity system directly.
    """
    if not m > 0:
        raise ValueError("mass must be positive")
    g = np.asarray(g, dtype=float)
    solver = ObstacleInfSolver(grid, a4, settings)
    if method == "active-set":
        A = -solver.lap
        b = -a4 * (1.0 - g)
        u, alpha, lam, _ = solve_mass_constrained_lcp(A, b, g, grid.weights, m, np.ones(grid.n_theta, bool))
        xi = np.where(u > 0, 1.0, np.clip(1.0 - lam / (a4 * (1.0 - g)), 0.0, 1.0))
        return ObstacleStateInf(u, xi, alpha, np.inf)
    if method != "pseudo-time":
        raise ValueError(f"unknown method {method!r}")
    state = solver.initial_state(np.full(grid.n_theta, m / grid.length), g)
    for _ in range(settings.steady_max_steps):
        new, _ = solver.step(state, dt, g, m)
        change = integrate_surface(grid, np.abs(new.u - state.u))
        state = new
        if change < settings.steady_tol * m:
            return replace(state, t=np.inf)
    raise ObstacleError(f"steady state not reached in {settings.steady_max_steps} pseudo-steps")
