"""Run orchestration and the verification studies behind the CLI."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .eps import EpsSolver, EpsStateFin, default_dt
from .model import ModelParams, SurfaceGrid, build_grids, eval_g, integrate_surface
from .obstacle_fin import ObstacleFinSolver, steady_dfin, steady_residual_fin
from .obstacle_inf import ObstacleInfSolver, steady_dinf, steady_residual
from .oracles import robin_collocation
from .records import RunRecord, Snapshot, Verdict
from .robin import RobinOperator

OBSTACLE_DT = 1e-2
CONTRACTION_TOL = {"obstacle-dinf": 1e-9, "obstacle-dfin": 1e-8}
LIMIT_OF = {"eps-inf": "obstacle-dinf", "eps-fin": "obstacle-dfin"}


class StudyError(ValueError):
    pass


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _echo(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")


def signal_g(cfg: RunConfig, grid: SurfaceGrid, a5: float | None = None):
    """``g`` as an array for static signals and as a callable of time otherwise."""
    spec = cfg.signal_spec()
    a5 = cfg.params.a5 if a5 is None else a5
    if spec.time_dependent:
        return lambda t: eval_g(spec.evaluate(grid, t), a5)
    return eval_g(spec.evaluate(grid), a5)


def _static_g(cfg: RunConfig, grid: SurfaceGrid) -> np.ndarray:
    g = signal_g(cfg, grid)
    if callable(g):
        raise StudyError("this study needs a time-independent signal")
    return g


def random_initial(grid: SurfaceGrid, m: float, rng: np.random.Generator, max_mode: int = 5) -> np.ndarray:
    """Smooth positive field of mass ``m``; half of the draws are cut to a random arc
    so that the obstacle is active from the start."""
    th = grid.theta
    f = np.zeros_like(th)
    for k in range(1, max_mode + 1):
        f += rng.normal() * np.cos(k * th) + rng.normal() * np.sin(k * th)
    f = np.exp(f / 2)
    if rng.random() < 0.5:
        f = f * (np.cos(th - rng.uniform(0, 2 * np.pi)) > rng.uniform(-0.5, 0.5))
    return f * (m / integrate_surface(grid, f))


# single runs ----------------------------------------------------------------

def _wanted_snapshots(cfg: RunConfig) -> list[float]:
    times = cfg.solver.snapshot_times
    return sorted(set([cfg.solver.t_end] if times is None else times))


def run_simulation(cfg: RunConfig, threads: int = 1) -> RunRecord:
    """Integrate the configured model and collect the series and snapshots."""
    s = cfg.solver
    grid, bulk = build_grids(cfg.grid.n_theta, cfg.grid.n_r)
    params = cfg.model_params()
    u0 = cfg.initial_field(grid)
    record = RunRecord("run", _echo(cfg))
    wanted = _wanted_snapshots(cfg)
    if s.model.startswith("eps"):
        dt = s.dt or default_dt(params.eps)
        solver = EpsSolver(grid, params, cfg.signal_spec(), bulk if s.model == "eps-fin" else None, s.laplacian)
        state = solver.init_state(u0, mass_tol=s.mass_tol)

        def row_of(st):
            d = solver.diagnostics(st)
            row = {"t": d.pop("t"), "mass": d.pop("mass"), "alpha": None,
                   "min_u": d.pop("min_U"), "max_u": d.pop("max_U"),
                   "support_fraction": d.pop("support_fraction")}
            row.update(d)
            return row

        def snap_of(st):
            w = st.w[-1] if isinstance(st, EpsStateFin) else np.full(grid.n_theta, st.w)
            return Snapshot(st.t, grid.theta, st.U, st.U / (params.eps + st.U), w)

        step = solver.advance
    else:
        dt = s.dt or OBSTACLE_DT
        g = signal_g(cfg, grid)
        g_of_t = g if callable(g) else (lambda t: g)
        if s.model == "obstacle-dinf":
            solver = ObstacleInfSolver(grid, params.a4, cfg.settings())
        else:
            solver = ObstacleFinSolver(grid, params, cfg.settings())
        state = solver.initial_state(u0, g_of_t(0.0))
        m = params.m

        def row_of(st, extra=None):
            row = {"t": st.t, "mass": integrate_surface(grid, st.u),
                   "alpha": getattr(st, "alpha", None), "min_u": float(st.u.min()),
                   "max_u": float(st.u.max()),
                   "support_fraction": float(np.mean(st.u > cfg.settings().threshold(st.u)))}
            if extra:
                row.update({k: v for k, v in extra.items() if k not in row})
            return row

        def snap_of(st):
            return Snapshot(st.t, grid.theta, st.u, st.xi, getattr(st, "w_trace", None))

        def step(st, dt_):
            if s.model == "obstacle-dinf":
                new, extra = solver.step(st, dt_, g_of_t(st.t + dt_), m)
            else:
                new, extra = solver.step(st, dt_, g_of_t(st.t + dt_))
            step.extra = extra
            return new
        step.extra = None

    n_steps = int(round(s.t_end / dt))
    record.series.append(row_of(state))
    taken = set()

    def maybe_snap(st):
        for ts in wanted:
            if ts not in taken and abs(st.t - ts) <= 0.5 * dt:
                record.snapshots.append(snap_of(st))
                taken.add(ts)

    maybe_snap(state)
    for n in range(1, n_steps + 1):
        try:
            state = step(state, dt)
        except Exception as err:  # noqa: BLE001 - re-raised with the step index
            raise RuntimeError(f"solver failed at step {n} (t={state.t + dt:.6g}): {err}") from err
        if n % s.record_every == 0 or n == n_steps:
            extra = getattr(step, "extra", None)
            record.series.append(row_of(state, extra) if extra is not None else row_of(state))
        maybe_snap(state)
    masses = np.array([r["mass"] for r in record.series])
    drift = float(np.max(np.abs(masses - params.m)))
    tol = 1e-8 * max(1.0, s.t_end) if s.model in ("eps-fin", "obstacle-dfin") else 1e-10
    record.verdicts.append(Verdict("mass_conservation", drift, tol * max(1.0, params.m), drift <= tol * max(1.0, params.m)))
    record.info.update(model=s.model, dt=dt, steps=n_steps)
    return record


# steady states ----------------------------------------------------------------

def limit_model(cfg: RunConfig) -> str:
    return LIMIT_OF.get(cfg.solver.model, cfg.solver.model)


def compute_steady(cfg: RunConfig, m: float | None = None, params: ModelParams | None = None,
                   grid: SurfaceGrid | None = None):
    grid = grid or SurfaceGrid(cfg.grid.n_theta)
    params = params or cfg.model_params()
    m = params.m if m is None else m
    g = _static_g(cfg, grid)
    st = cfg.settings()
    kw = dict(method=cfg.solver.steady_method, dt=cfg.solver.steady_dt)
    if params.infinite_diffusion:
        return steady_dinf(grid, m, g, params.a4, st, **kw)
    return steady_dfin(grid, m, g, params, st, **kw)


def steady_study(cfg: RunConfig, threads: int = 1) -> RunRecord:
    grid = SurfaceGrid(cfg.grid.n_theta)
    params = cfg.model_params()
    g = _static_g(cfg, grid)
    state = compute_steady(cfg, grid=grid)
    if params.infinite_diffusion:
        res = steady_residual(grid, state, g, params.a4, cfg.settings())
        w = None
    else:
        res = steady_residual_fin(grid, state, g, params, cfg.settings())
        w = state.w_trace
    record = RunRecord("steady", _echo(cfg))
    record.snapshots.append(Snapshot(math.inf, grid.theta, state.u, state.xi, w))
    mass_err = abs(integrate_surface(grid, state.u) - params.m)
    record.verdicts += [
        Verdict("stationary_residual", res, 1e-8, res < 1e-8),
        Verdict("steady_mass", mass_err, 1e-10 * max(1.0, params.m), mass_err < 1e-10 * max(1.0, params.m)),
    ]
    record.info.update(model=limit_model(cfg), support_fraction=float(np.mean(state.u > 0)),
                       alpha=getattr(state, "alpha", None))
    return record


# epsilon convergence ------------------------------------------------------------

def _limit_trajectory(cfg: RunConfig, grid, params, u0, g, dt, t_end):
    st = cfg.settings()
    if params.infinite_diffusion:
        solver = ObstacleInfSolver(grid, params.a4, st)
    else:
        solver = ObstacleFinSolver(grid, params, st)
    _, snaps, _ = solver.run(solver.initial_state(u0, g if not callable(g) else g(0.0)), dt, t_end, g)
    return np.array([s.t for s in snaps]), np.array([s.u for s in snaps])


def eps_trajectory(cfg: RunConfig, eps: float, sample_dt: float, t_end: float):
    """Run the eps-system with a step dividing ``sample_dt``; returns sampled
    times, ``U`` samples and the running sup of ``||v||_L2`` and ``max w``."""
    grid, bulk = build_grids(cfg.grid.n_theta, cfg.grid.n_r)
    params = cfg.model_params(eps=eps)
    sub = max(1, math.ceil(sample_dt / (cfg.solver.dt or default_dt(eps)) - 1e-9))
    dt = sample_dt / sub
    solver = EpsSolver(grid, params, cfg.signal_spec(), None if params.infinite_diffusion else bulk,
                       cfg.solver.laplacian)
    state = solver.init_state(cfg.initial_field(grid))
    n = int(round(t_end / sample_dt))
    ts, Us = [0.0], [state.U]
    v_sup = w_sup = 0.0
    mass_dev = 0.0
    for _ in range(n):
        for _ in range(sub):
            state = solver.advance(state, dt)
            d = solver.diagnostics(state)
            v_sup = max(v_sup, d["v_l2"])
            w_sup = max(w_sup, d["max_w"])
        mass_dev = max(mass_dev, abs(solver.total_mass(state) - params.m))
        ts.append(state.t)
        Us.append(state.U)
    return np.array(ts), np.array(Us), {"v_sup": v_sup, "w_sup": w_sup, "mass_dev": mass_dev, "dt": dt}


def space_time_l2(grid: SurfaceGrid, ts, diff, delta: float) -> float:
    keep = ts >= delta - 1e-12
    vals = grid.h * np.sum(diff[keep] ** 2, axis=1)
    return float(np.sqrt(np.trapezoid(vals, ts[keep])))


def eps_bound_constants(params: ModelParams, g, grid: SurfaceGrid) -> tuple[float, float]:
    """eps-independent constants for ``||v||_L2`` and ``w``: twice the bounds
    the limit problem implies (``w <= a4 max((1-g)/g) / a6`` and
    ``v <= (a4 + a6 w) / (c + a5)``)."""
    w_max = params.a4 * float(np.max((1.0 - g) / g)) / params.a6
    c_min = float(np.min(params.a5 * g / (1.0 - g)))
    v_max = (params.a4 + params.a6 * w_max) / (c_min + params.a5)
    return 2.0 * v_max * math.sqrt(grid.length), 2.0 * w_max


def converge_eps_study(cfg: RunConfig, threads: int = 1) -> RunRecord:
    sd = cfg.study
    eps_values = list(sd.eps_values)
    if len(eps_values) < 3:
        raise StudyError("eps sweep needs at least 3 values")
    if not cfg.solver.model.startswith("eps"):
        raise StudyError("converge-eps needs solver.model 'eps-inf' or 'eps-fin'")
    grid = SurfaceGrid(cfg.grid.n_theta)
    params = cfg.model_params()
    g = signal_g(cfg, grid)
    T = cfg.solver.t_end
    u0 = cfg.initial_field(grid)

    def job(item):
        if item == "limit":
            return _limit_trajectory(cfg, grid, params, u0, g, sd.limit_dt, T)
        return eps_trajectory(cfg, item, sd.limit_dt, T)

    results = _map(job, ["limit"] + eps_values, threads)
    t_ref, u_ref = results[0]
    rows, errors = [], []
    for eps, (ts, Us, info) in zip(eps_values, results[1:]):
        if ts.shape != t_ref.shape or np.max(np.abs(ts - t_ref)) > 1e-9:
            raise StudyError("eps and limit trajectories are sampled at different times")
        err = space_time_l2(grid, ts, Us - u_ref, sd.delta)
        errors.append(err)
        rows.append({"eps": eps, "error": err, "ratio": None if len(errors) == 1 else err / errors[-2],
                     "v_sup": info["v_sup"], "w_sup": info["w_sup"], "mass_dev": info["mass_dev"], "dt": info["dt"]})
    ratios = [b / a for a, b in zip(errors, errors[1:])]
    worst = max(ratios)
    record = RunRecord("converge-eps", _echo(cfg), tables={"converge_eps": rows})
    record.verdicts.append(Verdict("eps_error_ratio", worst, sd.ratio_max,
                                   all(r <= sd.ratio_max for r in ratios),
                                   "errors " + ", ".join(f"{e:.6g}" for e in errors)))
    cv, cw = eps_bound_constants(params, g(0.0) if callable(g) else g, grid)
    worst = max(max(r["v_sup"] for r in rows) / cv, max(r["w_sup"] for r in rows) / cw)
    record.verdicts.append(Verdict("eps_uniform_bound", worst, 1.0, bool(np.isfinite(worst)) and worst <= 1.0,
                                   f"sup ||v||_L2 / {cv:.4g} and sup w / {cw:.4g} over the sweep"))
    record.info.update(errors=errors, ratios=ratios, limit_model=limit_model(cfg))
    return record


# L1 contraction ---------------------------------------------------------------

def _obstacle_solver(cfg: RunConfig, grid: SurfaceGrid, params: ModelParams):
    if params.infinite_diffusion:
        return ObstacleInfSolver(grid, params.a4, cfg.settings())
    return ObstacleFinSolver(grid, params, cfg.settings())


def _step(solver, state, dt, g, m):
    if isinstance(solver, ObstacleInfSolver):
        return solver.step(state, dt, g, m)[0]
    return solver.step(state, dt, g)[0]


def contraction_series(solver, u1, u2, g, dt: float, t_end: float, mass_tol: float = 1e-10):
    """Series of ``int (u1-u2)_+`` and ``int (u2-u1)_+`` along two trajectories."""
    grid = solver.grid
    m1, m2 = integrate_surface(grid, u1), integrate_surface(grid, u2)
    if abs(m1 - m2) > mass_tol * max(1.0, abs(m1)):
        raise StudyError(f"initial conditions have unequal masses ({m1:.12g} vs {m2:.12g})")
    g_of_t = g if callable(g) else (lambda t: g)
    s1 = solver.initial_state(u1, g_of_t(0.0))
    s2 = solver.initial_state(u2, g_of_t(0.0))
    ts, d12, d21 = [0.0], [integrate_surface(grid, np.maximum(u1 - u2, 0))], [integrate_surface(grid, np.maximum(u2 - u1, 0))]
    for _ in range(int(round(t_end / dt))):
        gt = g_of_t(s1.t + dt)
        s1 = _step(solver, s1, dt, gt, m1)
        s2 = _step(solver, s2, dt, gt, m1)
        ts.append(s1.t)
        d12.append(integrate_surface(grid, np.maximum(s1.u - s2.u, 0)))
        d21.append(integrate_surface(grid, np.maximum(s2.u - s1.u, 0)))
    return np.array(ts), np.array(d12), np.array(d21)


def max_increment(series) -> float:
    series = np.asarray(series)
    return float(np.max(np.diff(series))) if series.size > 1 else 0.0


def contraction_study(cfg: RunConfig, threads: int = 1, pairs=None) -> RunRecord:
    """L1 contraction over random equal-mass pairs (or the given ``pairs``)."""
    model = limit_model(cfg)
    grid = SurfaceGrid(cfg.grid.n_theta)
    params = cfg.model_params()
    g = signal_g(cfg, grid)
    sd = cfg.study
    if pairs is None:
        rng = np.random.default_rng(cfg.seed)
        pairs = [(random_initial(grid, params.m, rng), random_initial(grid, params.m, rng)) for _ in range(sd.n_pairs)]
    if len(pairs) < 1:
        raise StudyError("contraction needs at least one pair of initial conditions")

    def job(pair):
        solver = _obstacle_solver(cfg, grid, params)
        return contraction_series(solver, pair[0], pair[1], g, sd.contraction_dt, cfg.solver.t_end, cfg.solver.mass_tol)

    results = _map(job, pairs, threads)
    rows = []
    worst = -math.inf
    for i, (ts, d12, d21) in enumerate(results):
        inc = max(max_increment(d12), max_increment(d21))
        worst = max(worst, inc)
        rows.append({"pair": i, "initial_distance": d12[0], "final_distance": d12[-1],
                     "max_increment_12": max_increment(d12), "max_increment_21": max_increment(d21)})
    tol = CONTRACTION_TOL[model]
    record = RunRecord("contraction", _echo(cfg), tables={"contraction": rows})
    record.verdicts.append(Verdict("l1_contraction", worst, tol, worst <= tol, f"{len(rows)} pairs, {model}"))
    record.info.update(model=model, pairs=len(rows))
    return record


# global stability -----------------------------------------------------------------

def stability_series(solver, steady_u, u0, g, dt: float, t_end: float):
    grid = solver.grid
    m = integrate_surface(grid, u0)
    state = solver.initial_state(u0, g)
    ts, linf, plus = [0.0], [float(np.max(np.abs(u0 - steady_u)))], [integrate_surface(grid, np.maximum(u0 - steady_u, 0))]
    for _ in range(int(round(t_end / dt))):
        state = _step(solver, state, dt, g, m)
        ts.append(state.t)
        linf.append(float(np.max(np.abs(state.u - steady_u))))
        plus.append(integrate_surface(grid, np.maximum(state.u - steady_u, 0)))
    return np.array(ts), np.array(linf), np.array(plus)


def arrival_time(ts, linf, tol: float) -> float:
    """First time after which the distance stays below ``tol`` (inf if never)."""
    above = np.flatnonzero(linf >= tol)
    if above.size == 0:
        return float(ts[0])
    last = above[-1]
    return float(ts[last + 1]) if last + 1 < ts.size else math.inf


def stability_study(cfg: RunConfig, threads: int = 1, initial=None) -> RunRecord:
    model = limit_model(cfg)
    grid = SurfaceGrid(cfg.grid.n_theta)
    params = cfg.model_params()
    g = _static_g(cfg, grid)
    sd = cfg.study
    target = compute_steady(cfg, grid=grid)
    if initial is None:
        rng = np.random.default_rng(cfg.seed)
        initial = [random_initial(grid, params.m, rng) for _ in range(sd.n_random)]

    def job(u0):
        solver = _obstacle_solver(cfg, grid, params)
        return stability_series(solver, target.u, u0, g, sd.stability_dt, sd.stability_t_end)

    results = _map(job, initial, threads)
    rows, series_rows = [], []
    worst_final, worst_inc, worst_T = 0.0, -math.inf, 0.0
    for i, (ts, linf, plus) in enumerate(results):
        T_star = arrival_time(ts, linf, sd.stability_tol)
        inc = max_increment(plus)
        rows.append({"run": i, "final_linf": linf[-1], "T_star": T_star, "max_plus_increment": inc})
        worst_final = max(worst_final, linf[-1])
        worst_inc = max(worst_inc, inc)
        worst_T = max(worst_T, T_star)
        stride = max(1, int(round(0.1 / sd.stability_dt)))
        series_rows += [{"run": i, "t": ts[k], "linf": linf[k], "plus_mass": plus[k]} for k in range(0, ts.size, stride)]
    record = RunRecord("stability", _echo(cfg), tables={"stability": rows, "stability_series": series_rows})
    record.verdicts += [
        Verdict("linf_distance_final", worst_final, sd.stability_tol, worst_final < sd.stability_tol,
                f"worst T* = {worst_T:.4g}"),
        Verdict("plus_mass_nonincreasing", worst_inc, 1e-9, worst_inc <= 1e-9),
    ]
    record.info.update(model=model, T_star=worst_T, support_fraction=float(np.mean(target.u > 0)))
    return record


# property suite -----------------------------------------------------------------

def random_robin_pair(grid: SurfaceGrid, rng: np.random.Generator):
    """Random admissible ``h >= 0`` (often vanishing on an arc) and ``s >= 0``."""
    th = grid.theta
    base = sum(rng.normal() * np.cos(k * th + rng.uniform(0, 2 * np.pi)) for k in range(1, 4))
    h = np.exp(base / 2) * 10 ** rng.uniform(-2, 1)
    if rng.random() < 0.5:
        h = h * (np.cos(th - rng.uniform(0, 2 * np.pi)) > rng.uniform(-0.8, 0.8))
    s = np.exp(sum(rng.normal() * np.sin(k * th + rng.uniform(0, 2 * np.pi)) for k in range(1, 4)) / 2)
    if rng.random() < 0.3:
        s = s * (np.cos(th - rng.uniform(0, 2 * np.pi)) > 0.3)
    return h, s


def operator_battery(grid: SurfaceGrid, n_samples: int, rng: np.random.Generator) -> dict:
    """Worst-case measurements of the L_h properties over random samples."""
    out = {"self_adjoint": 0.0, "identity": 0.0, "monotone": 0.0, "kappa": math.inf,
           "nonnegative": 0.0, "oracle": 0.0}
    for _ in range(n_samples):
        h, s = random_robin_pair(grid, rng)
        _, s2 = random_robin_pair(grid, rng)
        op = RobinOperator(grid, h)
        z = op.solve(s)
        z2 = op.solve(s2)
        out["self_adjoint"] = max(out["self_adjoint"], abs(grid.h * (s @ z2 - z @ s2)))
        out["identity"] = max(out["identity"], float(np.max(np.abs(op.solve(h) - 1.0))))
        h_small = h * rng.uniform(0, 1, h.size)
        if np.any(h_small > 0):
            z_small = RobinOperator(grid, h_small).solve(s)
            out["monotone"] = max(out["monotone"], float(np.max(z - z_small)))
        out["kappa"] = min(out["kappa"], float(z.min()) / integrate_surface(grid, s))
        out["nonnegative"] = max(out["nonnegative"], float(np.max(-z)))
        ref = robin_collocation(grid, h, s)
        out["oracle"] = max(out["oracle"], float(np.max(np.abs(z - ref)) / max(1.0, np.max(np.abs(ref)))))
    return out


def ell_oscillation(grid: SurfaceGrid, g, s, ells) -> list[float]:
    osc = []
    for ell in ells:
        z = ell * RobinOperator(grid, ell * g).solve(s)
        osc.append(float(z.max() - z.min()))
    return osc


def mass_ladder(cfg: RunConfig, factors, params: ModelParams, grid: SurfaceGrid, threads: int = 1):
    """Steady states of the finite-D limit along increasing masses; returns the
    states and the worst ordering violation of ``u``, ``w`` and ``xi``."""
    ms = sorted(params.m * f for f in factors)
    states = _map(lambda m: compute_steady(cfg, m=m, params=replace(params, m=m), grid=grid), ms, threads)
    worst = {"u": -math.inf, "w": -math.inf, "xi": -math.inf}
    for lo, hi in zip(states, states[1:]):
        worst["u"] = max(worst["u"], float(np.max(lo.u - hi.u)))
        worst["w"] = max(worst["w"], float(np.max(lo.w_trace - hi.w_trace)))
        worst["xi"] = max(worst["xi"], float(np.max(lo.xi - hi.xi)))
    return ms, states, worst


def d_limit_distances(cfg: RunConfig, ells, params: ModelParams, grid: SurfaceGrid, u0, g, dt: float, t_end: float,
                      threads: int = 1):
    """L1 distance at ``t_end`` between finite-D and infinite-D trajectories."""
    st = cfg.settings()

    def job(ell):
        if ell is None:
            solver = ObstacleInfSolver(grid, params.a4, st)
        else:
            solver = ObstacleFinSolver(grid, replace(params, D=params.a6 / ell), st)
        final, _, diag = solver.run(solver.initial_state(u0, g), dt, t_end, g)
        return final.u, float(np.max(np.abs(diag.column("mass") - integrate_surface(grid, u0))))

    results = _map(job, [None] + list(ells), threads)
    ref = results[0][0]
    return [integrate_surface(grid, np.abs(u - ref)) for u, _ in results[1:]], [d for _, d in results]


def property_suite(cfg: RunConfig, threads: int = 1) -> RunRecord:
    grid = SurfaceGrid(cfg.grid.n_theta)
    params = cfg.model_params()
    if params.infinite_diffusion:
        params = replace(params, D=1.0)
    g = _static_g(cfg, grid)
    sd = cfg.study
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord("properties", _echo(cfg))
    v = record.verdicts

    bat = operator_battery(grid, sd.n_operator_samples, rng)
    v += [
        Verdict("lh_self_adjoint", bat["self_adjoint"], 1e-10, bat["self_adjoint"] < 1e-10),
        Verdict("lh_identity", bat["identity"], 1e-9, bat["identity"] < 1e-9),
        Verdict("lh_monotone_in_h", bat["monotone"], 1e-10, bat["monotone"] < 1e-10),
        Verdict("lh_positivity_kappa", bat["kappa"], 0.0, bat["kappa"] > 0, "empirical lower constant"),
        Verdict("lh_nonnegative", bat["nonnegative"], 1e-10, bat["nonnegative"] < 1e-10),
        Verdict("lh_dense_oracle", bat["oracle"], 1e-10, bat["oracle"] < 1e-10),
    ]

    s = params.a4 * (1.0 - g)
    ells = sorted(sd.ell_values, reverse=True)
    osc = ell_oscillation(grid, g, s, ells)
    worst_osc = max((b - a for a, b in zip(osc, osc[1:])), default=0.0)
    v.append(Verdict("ell_oscillation_decreasing", worst_osc, 0.0, worst_osc < 0,
                     "oscillations " + ", ".join(f"{o:.4g}" for o in osc)))

    ms, _, worst = mass_ladder(cfg, sd.mass_ladder, params, grid, threads)
    for key in ("u", "w", "xi"):
        v.append(Verdict(f"steady_monotone_{key}", worst[key], 1e-8, worst[key] < 1e-8,
                         "masses " + ", ".join(f"{m:.4g}" for m in ms)))

    cells = sorted(sd.consistency_ells, reverse=True)
    u0 = cfg.initial_field(grid)
    if cfg.initial.kind == "uniform":
        u0 = np.exp(2 * np.cos(grid.theta - 1.0))
        u0 *= params.m / integrate_surface(grid, u0)
    dists, drifts = d_limit_distances(cfg, cells, params, grid, u0, g, sd.consistency_dt, 1.0, threads)
    worst_step = max(b - a for a, b in zip(dists, dists[1:]))
    v += [
        Verdict("d_limit_monotone", worst_step, 0.0, worst_step < 0,
                "distances " + ", ".join(f"{d:.4g}" for d in dists)),
        Verdict("d_limit_final", dists[-1], 5e-3 * params.m, dists[-1] < 5e-3 * params.m),
    ]
    record.tables["d_limit"] = [{"ell": e, "l1_distance": d} for e, d in zip(cells, dists)]
    record.tables["ell_oscillation"] = [{"ell": e, "oscillation": o} for e, o in zip(ells, osc)]
    record.info.update(kappa=bat["kappa"], mass_drift=max(drifts))
    return record


STUDIES = {
    "converge-eps": converge_eps_study,
    "contraction": contraction_study,
    "stability": stability_study,
    "properties": property_suite,
}

