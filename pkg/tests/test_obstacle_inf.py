import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bump_g, localized
from polarsim.model import SurfaceGrid, integrate_surface, laplacian_matrix
from polarsim.obstacle_inf import (
    ObstacleError,
    ObstacleInfSolver,
    ObstacleStateInf,
    alpha_of,
    steady_dinf,
    steady_residual,
    step_dinf,
    xi_of,
)
from polarsim.settings import SolverSettings
from polarsim.studies import random_initial


def test_alpha_constant_g():
    grid = SurfaceGrid(32)
    u = np.zeros(32)
    u[:5] = 1.0
    g = np.full(32, 0.4)
    assert alpha_of(grid, u, g, 2.0) == pytest.approx(2.0 * 0.6 / 0.4, rel=1e-14)
    assert alpha_of(grid, u, g, 2.0, support=np.ones(32, bool)) == pytest.approx(3.0, rel=1e-14)


def test_alpha_superset_invariance_with_xi(grid128):
    g = bump_g(grid128)
    u = steady_dinf(grid128, 0.5, g).u
    assert (u == 0).any()
    alpha = alpha_of(grid128, u, g, 1.0)
    xi, clamps = xi_of(u, alpha, g, 1.0)
    assert clamps == 0
    rng = np.random.default_rng(0)
    for _ in range(5):
        A = (u > 0) | (rng.random(128) < 0.5)
        assert abs(alpha_of(grid128, u, g, 1.0, support=A, xi=xi) - alpha) < 1e-10
    assert abs(alpha_of(grid128, u, g, 1.0, support=np.ones(128, bool), xi=xi) - alpha) < 1e-10


def test_alpha_support_must_cover_positivity_set():
    grid = SurfaceGrid(16)
    u = np.ones(16)
    with pytest.raises(ValueError):
        alpha_of(grid, u, np.full(16, 0.5), 1.0, support=np.arange(16) < 4)
    with pytest.raises(ObstacleError, match="degenerate positivity set"):
        alpha_of(grid, np.zeros(16), np.full(16, 0.5), 1.0)


def test_alpha_half_circle_against_exact_arc_integrals():
    # The set is the union of the node cells with cos(theta) > 0.  Nodal
    # quadrature on a sharp arc is a composite midpoint rule, so it converges
    # like h^2 rather than spectrally.
    errs = []
    for n in (128, 256, 512):
        grid = SurfaceGrid(n)
        th = grid.theta
        g = 0.5 + 0.25 * np.cos(th)
        A = np.cos(th) > 1e-12
        u = np.where(A, 1.0, 0.0)
        idx = np.flatnonzero(A)
        # arc is contiguous modulo 2 pi: nodes -pi/2 < theta < pi/2
        a = -np.pi / 2 + grid.h / 2
        b = np.pi / 2 - grid.h / 2
        assert idx.size == n // 2 - 1
        int_g = 0.5 * (b - a) + 0.25 * (np.sin(b) - np.sin(a))
        exact = (b - a - int_g) / int_g
        errs.append(abs(alpha_of(grid, u, g, 1.0, support=A) - exact))
    assert errs[0] < 1e-4
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_xi_examples():
    u = np.array([1.0, 0.0, 0.0])
    g = np.array([0.5, 0.5, 0.9])
    xi, clamps = xi_of(u, 0.5, g, 1.0)
    assert xi[0] == 1.0
    assert xi[1] == pytest.approx(0.5)
    assert xi[2] == 1.0 and clamps == 1


def test_uniform_fixed_point():
    grid = SurfaceGrid(64)
    g = np.full(64, 0.4)
    m = 1.3
    state = ObstacleInfSolver(grid, 1.0).initial_state(np.full(64, m / (2 * np.pi)), g)
    new = step_dinf(state, 0.1, g, 1.0)
    assert np.max(np.abs(new.u - state.u)) < 1e-13
    assert new.alpha == pytest.approx(0.6 / 0.4, rel=1e-12)


@pytest.mark.parametrize("lcp", ["active-set", "psor"])
def test_step_conserves_mass_and_complementarity(grid128, lcp):
    g = bump_g(grid128)
    settings_ = SolverSettings(lcp=lcp)
    solver = ObstacleInfSolver(grid128, 1.0, settings_)
    state = solver.initial_state(localized(grid128, 0.7), g)
    lap = laplacian_matrix(grid128, "fd2")
    amax = float(np.max((1 - g) / g))
    for _ in range(20):
        old = state
        state, row = solver.step(state, 0.01, g, 0.7)
        assert abs(integrate_surface(grid128, state.u) - 0.7) < 1e-10
        res = (state.u - old.u) / 0.01 - lap @ state.u + (1 - g) - state.alpha * g
        assert np.max(np.abs(np.minimum(state.u, res))) < 1e-8
        assert res.min() > -1e-8
        assert 0 <= state.alpha <= amax
        assert np.all((state.xi >= 0) & (state.xi <= 1))
        assert np.max(np.abs(state.u * state.xi - state.u)) < 1e-12
        assert row["stampacchia"] < 1e-8


def test_psor_matches_active_set(grid128):
    g = bump_g(grid128)
    u0 = localized(grid128, 0.5)
    a = ObstacleInfSolver(grid128, 1.0).step(ObstacleInfSolver(grid128, 1.0).initial_state(u0, g), 0.05, g)[0]
    ps = ObstacleInfSolver(grid128, 1.0, SolverSettings(lcp="psor"))
    p, row = ps.step(ps.initial_state(u0, g), 0.05, g)
    assert row["psor_sweeps"] > 0
    assert np.max(np.abs(a.u - p.u)) < 1e-10
    assert abs(a.alpha - p.alpha) < 1e-10


def test_matches_richardson_reference():
    def run(n, dt):
        grid = SurfaceGrid(n)
        g = bump_g(grid)
        solver = ObstacleInfSolver(grid, 1.0)
        final, _, _ = solver.run(solver.initial_state(localized(grid, 0.5), g), dt, 0.5, g)
        return final.u

    ref = 2 * run(256, 2e-4) - run(256, 4e-4)
    u = run(128, 2.5e-4)
    assert SurfaceGrid(128).h * np.abs(u - ref[::2]).sum() < 2e-4


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_contraction_property(seed):
    grid = SurfaceGrid(64)
    g = bump_g(grid)
    rng = np.random.default_rng(seed)
    u1, u2 = random_initial(grid, 1.0, rng), random_initial(grid, 1.0, rng)
    solver = ObstacleInfSolver(grid, 1.0)
    s1, s2 = solver.initial_state(u1, g), solver.initial_state(u2, g)
    d = integrate_surface(grid, np.maximum(u1 - u2, 0))
    for _ in range(30):
        s1, _ = solver.step(s1, 0.02, g, 1.0)
        s2, _ = solver.step(s2, 0.02, g, 1.0)
        dn = integrate_surface(grid, np.maximum(s1.u - s2.u, 0))
        assert dn <= d + 1e-9
        d = dn


def test_steady_uniform_for_constant_g():
    grid = SurfaceGrid(64)
    g = np.full(64, 0.25)
    st_ = steady_dinf(grid, 2.0, g, a4=1.5)
    assert np.max(np.abs(st_.u - 2.0 / (2 * np.pi))) < 1e-12
    assert st_.alpha == pytest.approx(1.5 * 0.75 / 0.25, rel=1e-12)


def test_steady_full_support_large_mass(grid128):
    g = bump_g(grid128)
    st_ = steady_dinf(grid128, 6.0, g)
    assert st_.u.min() > 0 and np.all(st_.xi == 1)
    assert st_.alpha == pytest.approx(integrate_surface(grid128, 1 - g) / integrate_surface(grid128, g), rel=1e-10)


def test_steady_polarized_matches_active_set(grid128):
    g = bump_g(grid128)
    a = steady_dinf(grid128, 0.5, g)
    b = steady_dinf(grid128, 0.5, g, method="active-set")
    assert (a.u == 0).any()
    assert np.max(np.abs(a.u - b.u)) < 1e-9
    assert abs(a.alpha - b.alpha) < 1e-9
    assert steady_residual(grid128, a, g, 1.0) < 1e-8


def test_run_with_time_dependent_g(grid64):
    solver = ObstacleInfSolver(grid64, 1.0)
    g0 = bump_g(grid64)
    state = solver.initial_state(localized(grid64, 1.0), g0)
    final, snaps, diag = solver.run(state, 0.05, 0.5, lambda t: g0 * (1 - 0.1 * np.sin(t)), record_every=5)
    assert len(diag) == 10 and len(snaps) == 3
    assert np.max(np.abs(diag.column("mass") - 1.0)) < 1e-10
    assert isinstance(final, ObstacleStateInf)


def test_nonpositive_dt_rejected(grid64):
    solver = ObstacleInfSolver(grid64, 1.0)
    g = bump_g(grid64)
    with pytest.raises(ValueError):
        solver.step(solver.initial_state(localized(grid64, 1.0), g), 0.0, g)
