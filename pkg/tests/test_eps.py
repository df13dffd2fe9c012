import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import localized
from polarsim.eps import (
    EpsSolver,
    EpsStateInf,
    StepRejected,
    default_dt,
    init_eps_data,
    step_eps_fin,
    step_eps_inf,
    total_mass,
)
from polarsim.model import ModelParams, SignalSpec, SurfaceGrid, build_grids
from polarsim.studies import random_initial
from uniform_oracle import radial_uniform, shadow_uniform, uniform_equilibrium

CONST = SignalSpec(kind="constant", level=1.0)
BUMP = SignalSpec()
P_INF = ModelParams(a1=0.3, a2=0.5)
P_FIN = ModelParams(a1=0.3, a2=0.5, D=1.0)


def uniform(grid, m):
    return np.full(grid.n_theta, m / (2 * np.pi))


def test_uniform_initial_data():
    grid, bulk = build_grids(16, 8)
    state = init_eps_data(grid, uniform(grid, 1.0), P_INF, CONST)
    assert isinstance(state, EpsStateInf)
    assert np.all(state.v == 0) and state.w == 0.0
    fin = init_eps_data(grid, uniform(grid, 1.0), P_FIN, CONST, bulk)
    assert fin.w.shape == (8, 16) and np.all(fin.w == 0)
    assert total_mass(state, P_INF) == pytest.approx(1.0, abs=1e-14)
    assert total_mass(fin, P_FIN, bulk) == pytest.approx(1.0, abs=1e-14)


def test_bump_initial_data_passes_invariants():
    grid = SurfaceGrid(64)
    state = init_eps_data(grid, localized(grid, 1.0), P_INF, BUMP)
    assert state.U.min() >= 0 and state.w >= 0
    assert abs(total_mass(state, P_INF) - 1.0) < 1e-10


def test_initial_data_errors():
    grid, bulk = build_grids(16, 8)
    with pytest.raises(ValueError, match="initial surface mass must equal m"):
        init_eps_data(grid, uniform(grid, 0.5), P_INF, CONST)
    with pytest.raises(ValueError, match="initial surface mass must equal m"):
        init_eps_data(grid, uniform(grid, 0.5), P_FIN, CONST, bulk)
    bad = uniform(grid, 1.0)
    bad[0] = -1e-3
    with pytest.raises(ValueError, match="nonnegative"):
        init_eps_data(grid, bad, P_INF, CONST)
    with pytest.raises(ValueError, match="bulk grid"):
        EpsSolver(grid, P_FIN, CONST)


def test_override_must_respect_mass():
    grid, bulk = build_grids(16, 8)
    zero = np.zeros(16)
    w0 = P_INF.m / (P_INF.eps * np.pi)
    state = init_eps_data(grid, zero, P_INF, CONST, v0=zero, w0=w0)
    assert state.w == pytest.approx(w0)
    with pytest.raises(ValueError, match="mass identity"):
        init_eps_data(grid, zero, P_INF, CONST, v0=zero, w0=2 * w0)
    with pytest.raises(ValueError, match="mass identity"):
        init_eps_data(grid, zero, P_FIN, CONST, bulk, v0=zero, w0=np.ones((8, 16)))


def test_default_dt():
    assert default_dt(0.1) == 1e-2 and default_dt(0.01) == 5e-3


def test_nonpositive_dt_rejected():
    grid = SurfaceGrid(16)
    state = init_eps_data(grid, uniform(grid, 1.0), P_INF, CONST)
    with pytest.raises(ValueError):
        step_eps_inf(state, 0.0, P_INF, CONST, grid)


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_shadow_uniform_matches_ode_oracle(eps):
    p = ModelParams(a1=0.3, a2=0.5, eps=eps)
    grid = SurfaceGrid(16)
    solver = EpsSolver(grid, p, CONST)
    dt = min(2.5e-3, eps / 2)
    state, _, _ = solver.run(solver.init_state(uniform(grid, 1.0)), dt, 1.0, record_every=1000)
    U, v, w = shadow_uniform(p, 1.0, 1 / (2 * np.pi), 0.0, 1.0)
    assert np.ptp(state.U) < 1e-14 and np.ptp(state.v) < 1e-14
    assert np.max(np.abs(state.U - U)) < 1e-6
    assert np.max(np.abs(state.v - v)) < 1e-6
    assert abs(state.w - w) < 1e-6


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_bulk_uniform_matches_radial_oracle(eps):
    p = ModelParams(a1=0.3, a2=0.5, D=1.0, eps=eps)
    grid, bulk = build_grids(16, 64)
    solver = EpsSolver(grid, p, CONST, bulk)
    dt = min(2.5e-3, eps / 2)
    state, _, _ = solver.run(solver.init_state(uniform(grid, 1.0)), dt, 1.0, record_every=1000)
    U, v, r, w = radial_uniform(p, 1.0, 1 / (2 * np.pi), 0.0, 0.0, 1.0)
    assert np.ptp(state.U) < 1e-13 and np.max(np.ptp(state.w, axis=1)) < 1e-13
    assert np.max(np.abs(state.U - U)) < 1e-6
    assert np.max(np.abs(state.v - v)) < 1e-6
    profile = np.interp(bulk.radii, r, w)
    assert np.max(np.abs(state.w[:, 0] - profile)) < 1e-6


def test_strang_step_is_second_order():
    p = ModelParams(a1=0.3, a2=0.5)
    grid = SurfaceGrid(8)
    U, _, _ = shadow_uniform(p, 1.0, 1 / (2 * np.pi), 0.0, 0.5)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        solver = EpsSolver(grid, p, CONST)
        state, _, _ = solver.run(solver.init_state(uniform(grid, 1.0)), dt, 0.5, record_every=1000)
        errs.append(abs(state.U[0] - U))
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def test_mass_identity_every_step_shadow():
    grid = SurfaceGrid(64)
    solver = EpsSolver(grid, P_INF, BUMP)
    state = solver.init_state(localized(grid, 1.0))
    for _ in range(100):
        state = solver.advance(state, 0.01)
        assert abs(solver.total_mass(state) - 1.0) < 1e-12
        assert state.U.min() >= -1e-12 and state.v.min() >= -1e-12 and state.w >= 0


def test_mass_drift_bulk():
    grid, bulk = build_grids(64, 32)
    solver = EpsSolver(grid, P_FIN, BUMP, bulk)
    state = solver.init_state(localized(grid, 1.0))
    _, _, diag = solver.run(state, 0.01, 1.0)
    assert np.max(np.abs(diag.column("mass") - 1.0)) < 1e-8
    assert min(diag.column("min_w")) >= -1e-12


def test_free_functions_match_solver():
    grid, bulk = build_grids(32, 16)
    s_inf = init_eps_data(grid, localized(grid, 1.0), P_INF, BUMP)
    a = step_eps_inf(s_inf, 0.01, P_INF, BUMP, grid)
    b = EpsSolver(grid, P_INF, BUMP).step(s_inf, 0.01)
    assert np.array_equal(a.U, b.U) and a.w == b.w
    s_fin = init_eps_data(grid, localized(grid, 1.0), P_FIN, BUMP, bulk)
    c = step_eps_fin(s_fin, 0.01, P_FIN, BUMP, bulk)
    d = EpsSolver(grid, P_FIN, BUMP, bulk).step(s_fin, 0.01)
    assert np.array_equal(c.w, d.w)


def test_attachment_from_empty_membrane():
    grid = SurfaceGrid(32)
    zero = np.zeros(32)

    def run(dt):
        solver = EpsSolver(grid, P_INF, BUMP)
        state = solver.init_state(zero, v0=zero, w0=P_INF.m / (P_INF.eps * np.pi))
        return solver.run(state, dt, 0.2, record_every=1000)[0]

    coarse, fine = run(0.01), run(0.01 / 16)
    assert coarse.U.min() > 0 and coarse.v.min() > 0
    assert np.max(np.abs(coarse.U - fine.U)) < 5e-3 * fine.U.max()
    assert np.max(np.abs(coarse.v - fine.v)) < 5e-3 * fine.v.max()


def test_bulk_equilibrium_is_stationary():
    p = ModelParams(a1=0.3, a2=0.5, D=2.0, eps=0.05)
    U, v, w = uniform_equilibrium(p, 1.0)
    grid, bulk = build_grids(16, 16)
    solver = EpsSolver(grid, p, CONST, bulk)
    state = solver.init_state(np.full(16, U), v0=np.full(16, v), w0=np.full((16, 16), w))
    for _ in range(20):
        new = solver.step(state, 0.01)
        assert np.max(np.abs(new.U - state.U)) < 1e-8
        assert np.max(np.abs(new.v - state.v)) < 1e-8
        assert np.max(np.abs(new.w - state.w)) < 1e-8
        state = new


def test_advance_halves_on_rejection(monkeypatch):
    grid = SurfaceGrid(16)
    solver = EpsSolver(grid, P_INF, CONST)
    state = solver.init_state(uniform(grid, 1.0))
    real_step = solver.step
    sizes = []

    def flaky(s, dt):
        sizes.append(dt)
        if dt > 0.03:
            raise StepRejected("Newton did not converge in 50 iterations", dt / 2)
        return real_step(s, dt)

    monkeypatch.setattr(solver, "step", flaky)
    new = solver.advance(state, 0.1)
    assert new.t == pytest.approx(0.1)
    assert sizes.count(0.025) == 4
    monkeypatch.setattr(solver, "step", lambda s, dt: (_ for _ in ()).throw(StepRejected("no", dt)))
    with pytest.raises(StepRejected):
        solver.advance(state, 0.1)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.05, 0.025]), st.booleans())
def test_nonnegative_and_conservative(seed, eps, finite):
    rng = np.random.default_rng(seed)
    p = ModelParams(a1=rng.uniform(0, 1), a2=rng.uniform(0, 1), a4=rng.uniform(0.5, 2),
                    D=2.0 if finite else np.inf, eps=eps)
    grid, bulk = build_grids(32, 8)
    solver = EpsSolver(grid, p, BUMP, bulk if finite else None)
    state = solver.init_state(random_initial(grid, 1.0, rng))
    for _ in range(20):
        state = solver.advance(state, default_dt(eps))
        assert state.U.min() >= -1e-12 and state.v.min() >= -1e-12
        assert np.min(state.w) >= -1e-12
    assert abs(solver.total_mass(state) - 1.0) < 1e-9
