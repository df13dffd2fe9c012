"""Time integration of the rescaled fast-reaction systems.

Unknowns are ``U = eps u`` and ``v`` on the circle plus the cytosolic ``w``,
a scalar fixed by mass conservation when ``D`` is infinite and a bulk field
on the disk otherwise.  One step is a Strang splitting

    local reactions (dt/2) -> linear transport (dt) -> local reactions (dt/2).

The local part (activation/deactivation) keeps ``U + eps v`` fixed at every
node, so it reduces to one scalar stiff ODE per node, integrated with the
L-stable two-stage SDIRK method and a safeguarded Newton solve.  The linear
part (membrane diffusion, attachment/detachment, cytosolic diffusion) is
diagonal in the angular Fourier modes and is applied as an exact matrix
exponential per mode; its generator conserves mass, so the discrete total
mass is preserved to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    BulkGrid,
    Diagnostics,
    ModelParams,
    SignalSpec,
    SurfaceGrid,
    check_surface_field,
    integrate_bulk,
    integrate_surface,
    laplacian_symbol,
)

GAMMA = 1.0 - 1.0 / np.sqrt(2.0)


class StepRejected(RuntimeError):
    def __init__(self, message: str, dt_suggest: float):
        super().__init__(message)
        self.dt_suggest = dt_suggest


@dataclass(frozen=True)
class EpsStateInf:
    U: np.ndarray
    v: np.ndarray
    w: float
    t: float = 0.0


@dataclass(frozen=True)
class EpsStateFin:
    U: np.ndarray
    v: np.ndarray
    w: np.ndarray  # (n_r, n_theta), last row is the membrane trace
    t: float = 0.0


def default_dt(eps: float) -> float:
    return min(1e-2, eps / 2.0)


# local reactions ------------------------------------------------------------

class _Kinetics:
    """Scalar per-node reaction ``dU/dt = R(U) (P - U) / eps - a4 U / (eps + U)``."""

    def __init__(self, params: ModelParams):
        self.p = params

    def rate(self, U, c):
        p, e = self.p, self.p.eps
        return e * p.a1 + e * p.a2 * U / (e * p.a3 + U) + c

    def f(self, U, P, c):
        p, e = self.p, self.p.eps
        return self.rate(U, c) * (P - U) / e - p.a4 * U / (e + U)

    def df(self, U, P, c):
        p, e = self.p, self.p.eps
        dR = e * p.a2 * e * p.a3 / (e * p.a3 + U) ** 2
        dF = p.a4 * e / (e + U) ** 2
        return (dR * (P - U) - self.rate(U, c)) / e - dF

    def solve_implicit(self, b, P, c, h, y0, bracket: bool, tol: float = 1e-14, max_iter: int = 50):
        """Solve ``Y - h f(Y) = b`` node-wise.

        With ``bracket`` the root is kept inside ``[0, P]`` (valid when
        ``0 <= b <= P``) by bisection safeguards; otherwise plain Newton.
        Returns ``(Y, converged_mask)``.
        """
        Y = np.array(y0, dtype=float, copy=True)
        lo = np.zeros_like(Y)
        hi = np.array(P, dtype=float, copy=True)
        done = np.zeros(Y.shape, dtype=bool)
        scale = np.maximum(1.0, np.abs(P))
        for _ in range(max_iter):
            G = Y - h * self.f(Y, P, c) - b
            dG = 1.0 - h * self.df(Y, P, c)
            if bracket:
                lo = np.where(G < 0, Y, lo)
                hi = np.where(G > 0, Y, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = G / dG
            Y_new = Y - step
            if bracket:
                bad = ~np.isfinite(Y_new) | (Y_new <= lo) | (Y_new >= hi) | (dG <= 0)
                Y_new = np.where(bad & ~done, 0.5 * (lo + hi), Y_new)
            else:
                bad = ~np.isfinite(Y_new) | (Y_new <= -self.p.eps)
                Y_new = np.where(bad, Y, Y_new)
            conv = np.abs(Y_new - Y) <= tol * scale
            Y = np.where(done, Y, Y_new)
            done |= conv
            if done.all():
                break
        return Y, done


def local_reactions(kin: _Kinetics, U, v, c, tau: float):
    """Integrate the per-node reactions over ``tau`` with SDIRK2, falling back to
    implicit Euler at nodes where SDIRK2 leaves the invariant interval."""
    eps = kin.p.eps
    P = U + eps * v
    h = GAMMA * tau
    Y1, ok1 = kin.solve_implicit(U, P, c, h, U, bracket=True)
    b2 = U + ((1.0 - GAMMA) / GAMMA) * (Y1 - U)
    Y2, ok2 = kin.solve_implicit(b2, P, c, h, Y1, bracket=False)
    fallback = ~ok2 | (Y2 < 0.0) | (Y2 > P)
    if fallback.any():
        idx = np.flatnonzero(fallback)
        Ye, oke = kin.solve_implicit(U[idx], P[idx], c[idx], tau, U[idx], bracket=True)
        if not oke.all():
            raise StepRejected("Newton did not converge in 50 iterations", tau / 2)
        Y2 = Y2.copy()
        Y2[idx] = Ye
    if not ok1.all():
        raise StepRejected("Newton did not converge in 50 iterations", tau / 2)
    U_new = Y2
    v_new = (P - U_new) / eps
    return U_new, v_new, int(fallback.sum())


# linear transport -----------------------------------------------------------

class EpsSolver:
    """Stepper for the rescaled system; ``params.D`` selects the shadow (infinite) or bulk model."""

    def __init__(self, grid: SurfaceGrid, params: ModelParams, signal: SignalSpec,
                 bulk: BulkGrid | None = None, laplacian: str = "fd2"):
        self.grid = grid
        self.params = params
        self.signal = signal
        self.laplacian = laplacian
        self.symbol = laplacian_symbol(grid, laplacian)
        self.kin = _Kinetics(params)
        self.finite = not params.infinite_diffusion
        if self.finite:
            if bulk is None:
                raise ValueError("finite D needs a bulk grid")
            if bulk.n_theta != grid.n_theta:
                raise ValueError("bulk grid must share n_theta with the surface grid")
        self.bulk = bulk
        self.omega_area = bulk.area if bulk is not None else np.pi
        self._expm_cache: dict[float, np.ndarray] = {}
        self.fallback_nodes = 0

    # state construction ---------------------------------------------------
    def init_state(self, u0, v0=None, w0=None, t: float = 0.0, mass_tol: float = 1e-10):
        """Initial data ``U = u0``, ``v = 0``, ``w = 0`` unless overridden.

        The total mass of the resulting state must equal ``params.m``.
        """
        grid, p = self.grid, self.params
        U = check_surface_field(grid, u0, "u0").copy()
        v = np.zeros(grid.n_theta) if v0 is None else check_surface_field(grid, v0, "v0").copy()
        if np.any(U < 0) or np.any(v < 0):
            raise ValueError("initial data must be nonnegative")
        if self.finite:
            shape = (self.bulk.n_r, grid.n_theta)
            w = np.zeros(shape) if w0 is None else np.array(w0, dtype=float).reshape(shape)
            if np.any(w < 0):
                raise ValueError("initial data must be nonnegative")
            state = EpsStateFin(U, v, w, t)
        else:
            if w0 is None:
                if v0 is None and abs(integrate_surface(grid, U) - p.m) > mass_tol * max(1.0, p.m):
                    raise ValueError("initial surface mass must equal m")
                w = (p.m - integrate_surface(grid, U + p.eps * v)) / (p.eps * self.omega_area)
            else:
                w = float(w0)
            if w < -1e-12:
                raise ValueError("initial data carries more mass than m")
            state = EpsStateInf(U, v, max(w, 0.0), t)
        err = abs(self.total_mass(state) - p.m)
        if err > mass_tol * max(1.0, p.m):
            if v0 is None and w0 is None:
                raise ValueError("initial surface mass must equal m")
            raise ValueError(f"initial data violate the mass identity by {err:.3e}")
        return state

    def total_mass(self, state) -> float:
        eps = self.params.eps
        surf = integrate_surface(self.grid, state.U + eps * state.v)
        if isinstance(state, EpsStateFin):
            return eps * integrate_bulk(self.bulk, state.w) + surf
        return eps * self.omega_area * state.w + surf

    # linear part ------------------------------------------------------------
    def _bulk_generators(self) -> np.ndarray:
        """Per-mode generators acting on ``[w_0 .. w_{n_r-1}, v]``."""
        p, b = self.params, self.bulk
        eps, D = p.eps, p.D
        nr = b.n_r
        r, f, A = b.radii, b.faces, b.cell_areas
        cond = f[1:-1] / np.diff(r)  # interior face conductances
        K = self.symbol.size
        G = np.zeros((K, nr + 1, nr + 1))
        base = np.zeros((nr + 1, nr + 1))
        for i in range(nr - 1):
            base[i, i] -= cond[i]
            base[i, i + 1] += cond[i]
            base[i + 1, i + 1] -= cond[i]
            base[i + 1, i] += cond[i]
        base[:nr] *= D
        # membrane exchange through the outer face r = 1
        base[nr - 1, nr - 1] -= p.a6
        base[nr - 1, nr] += p.a5
        base[:nr] /= (eps * A)[:, None]
        base[nr, nr] = -p.a5 / eps
        base[nr, nr - 1] = p.a6 / eps
        ang = D * A / r ** 2 / (eps * A)
        for k in range(K):
            G[k] = base
            G[k, np.arange(nr), np.arange(nr)] += self.symbol[k] * ang
            G[k, nr, nr] += self.symbol[k]
        return G

    def _propagators(self, tau: float) -> np.ndarray:
        E = self._expm_cache.get(tau)
        if E is None:
            E = np.stack([scipy.linalg.expm(tau * Gk) for Gk in self._bulk_generators()])
            self._expm_cache[tau] = E
        return E

    def _linear_inf(self, state: EpsStateInf, tau: float) -> EpsStateInf:
        p, grid = self.params, self.grid
        eps = p.eps
        n = grid.n_theta
        Uh = np.fft.rfft(state.U) * np.exp(tau * self.symbol)
        vh = np.fft.rfft(state.v)
        vh[1:] *= np.exp(tau * (self.symbol[1:] - p.a5 / eps))
        U_mean = Uh[0].real / n
        v_mean = vh[0].real / n
        kappa = p.a5 / eps + p.a6 * grid.length / (eps * self.omega_area)
        q = p.a6 * (p.m - grid.length * U_mean) / (eps ** 2 * self.omega_area)
        v_inf = q / kappa
        vh[0] = n * (v_inf + (v_mean - v_inf) * np.exp(-kappa * tau))
        U = np.fft.irfft(Uh, n=n)
        v = np.fft.irfft(vh, n=n)
        return EpsStateInf(U, v, state.w, state.t)

    def _linear_fin(self, state: EpsStateFin, tau: float) -> EpsStateFin:
        n = self.grid.n_theta
        E = self._propagators(tau)
        Uh = np.fft.rfft(state.U) * np.exp(tau * self.symbol)
        X = np.vstack([np.fft.rfft(state.w, axis=1), np.fft.rfft(state.v)[None, :]])
        X = np.einsum("kij,jk->ik", E, X)
        w = np.fft.irfft(X[:-1], n=n, axis=1)
        v = np.fft.irfft(X[-1], n=n)
        return EpsStateFin(np.fft.irfft(Uh, n=n), v, w, state.t)

    def _shadow_w(self, U, v) -> float:
        p = self.params
        return (p.m - integrate_surface(self.grid, U + p.eps * v)) / (p.eps * self.omega_area)

    # stepping -------------------------------------------------------------
    def step(self, state, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        c = self.signal.evaluate(self.grid, state.t + 0.5 * dt)
        U, v, nf1 = local_reactions(self.kin, state.U, state.v, c, 0.5 * dt)
        if self.finite:
            mid = self._linear_fin(EpsStateFin(U, v, state.w, state.t), dt)
        else:
            mid = self._linear_inf(EpsStateInf(U, v, state.w, state.t), dt)
        U, v, nf2 = local_reactions(self.kin, mid.U, mid.v, c, 0.5 * dt)
        self.fallback_nodes += nf1 + nf2
        t = state.t + dt
        if self.finite:
            return EpsStateFin(U, v, mid.w, t)
        return EpsStateInf(U, v, self._shadow_w(U, v), t)

    def diagnostics(self, state) -> dict:
        eps = self.params.eps
        w = np.atleast_1d(state.w)
        return {
            "t": state.t,
            "mass": self.total_mass(state),
            "min_U": float(state.U.min()),
            "max_U": float(state.U.max()),
            "min_v": float(state.v.min()),
            "max_v": float(state.v.max()),
            "min_w": float(w.min()),
            "max_w": float(w.max()),
            "support_fraction": float(np.mean(state.U > eps)),
            "v_l2": float(np.sqrt(integrate_surface(self.grid, state.v ** 2))),
        }

    def advance(self, state, dt: float, depth: int = 0):
        """One step of size ``dt``, halving on rejection (at most 10 times)."""
        try:
            return self.step(state, dt)
        except StepRejected:
            if depth >= 10:
                raise
            half = self.advance(state, dt / 2, depth + 1)
            return self.advance(half, dt / 2, depth + 1)

    def run(self, state, dt: float, t_end: float, record_every: int = 1, callback=None):
        n_steps = int(round((t_end - state.t) / dt))
        snaps = [state]
        diag = Diagnostics()
        diag.append(**self.diagnostics(state))
        for n in range(1, n_steps + 1):
            state = self.advance(state, dt)
            row = self.diagnostics(state)
            diag.append(**row)
            if callback is not None:
                callback(state, row)
            if n % record_every == 0 or n == n_steps:
                snaps.append(state)
        return state, snaps, diag


def init_eps_data(grid: SurfaceGrid, u0, params: ModelParams, signal: SignalSpec,
                  bulk: BulkGrid | None = None, **overrides):
    return EpsSolver(grid, params, signal, bulk).init_state(u0, **overrides)


def step_eps_inf(state: EpsStateInf, dt: float, params: ModelParams, signal: SignalSpec,
                 grid: SurfaceGrid | None = None) -> EpsStateInf:
    grid = grid or SurfaceGrid(state.U.size)
    return EpsSolver(grid, params, signal).advance(state, dt)


def step_eps_fin(state: EpsStateFin, dt: float, params: ModelParams, signal: SignalSpec,
                 bulk: BulkGrid | None = None) -> EpsStateFin:
    bulk = bulk or BulkGrid(state.w.shape[0], state.w.shape[1])
    return EpsSolver(bulk.surface, params, signal, bulk).advance(state, dt)


def total_mass(state, params: ModelParams, bulk: BulkGrid | None = None) -> float:
    grid = SurfaceGrid(state.U.size)
    if isinstance(state, EpsStateFin):
        bulk = bulk or BulkGrid(state.w.shape[0], state.w.shape[1])
        return params.eps * integrate_bulk(bulk, state.w) + integrate_surface(grid, state.U + params.eps * state.v)
    return params.eps * np.pi * state.w + integrate_surface(grid, state.U + params.eps * state.v)
