import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpflux.jumpfield import make_preset
from jumpflux.mesh import build_equidistant, build_jump_adapted, refine_wave_cells
from jumpflux.solver import (FluxModel, GodunovSolver, NewtonFailure, SolverConfig, SolverError,
                             backward_euler_step, burgers_flux, cfl_dt, forward_euler_step,
                             godunov_flux_general, godunov_flux_multiplicative_convex,
                             init_cell_averages, interface_fluxes, solve)


def const(value=1.0):
    return make_preset("constant", value=value)


def burgers_f(u):
    return 0.5 * np.square(u)


def brute_godunov(F, ul, ur, n=100_001):
    """Oracle: extremum of F over a dense grid between the two states."""
    theta = np.linspace(min(ul, ur), max(ul, ur), n)
    vals = F(theta)
    return vals.min() if ul <= ur else vals.max()


def riemann_exact(x, t, x0=0.5):
    """Burgers, a = 1, periodic data 1 on (0, x0), 0 on (x0, 1), before waves meet."""
    fan = (x >= 0) & (x < t)
    u = np.where(fan, x / max(t, 1e-300), 0.0)
    u = np.where((x >= t) & (x < x0 + t / 2), 1.0, u)
    return u


# -- initial data ---------------------------------------------------------------

def test_cell_averages_constant():
    np.testing.assert_allclose(init_cell_averages(lambda x: np.full_like(x, 3.5),
                                                  build_equidistant(7)), 3.5, rtol=1e-15)


def test_cell_average_sine_single_cell():
    avg = init_cell_averages(lambda x: np.sin(np.pi * x), build_equidistant(1))
    assert avg[0] == pytest.approx(2 / np.pi, abs=1e-6)


def test_cell_averages_linear_in_kappa():
    m = build_equidistant(13)
    base = init_cell_averages(lambda x: np.sin(np.pi * x), m)
    scaled = init_cell_averages(lambda x: 0.3 * np.sin(np.pi * x), m)
    np.testing.assert_allclose(scaled, 0.3 * base, rtol=1e-14)


def test_cell_averages_exact_for_polynomials():
    m = build_jump_adapted(5, [0.37])
    avg = init_cell_averages(lambda x: x**3, m)
    x = m.interfaces
    exact = (x[1:] ** 4 - x[:-1] ** 4) / 4 / m.cell_sizes
    np.testing.assert_allclose(avg, exact, rtol=1e-12)


# -- numerical fluxes -------------------------------------------------------------

def test_simplified_flux_examples():
    assert godunov_flux_multiplicative_convex(1.0, 1.0, burgers_f, 0.0, 0.0) == 0.0
    assert godunov_flux_multiplicative_convex(1.0, 1.0, burgers_f, 1.0, 0.0) == 0.5
    assert godunov_flux_multiplicative_convex(0.5, 1.5, burgers_f, 1.0, -1.0) == 0.75


def test_general_flux_examples():
    F = burgers_flux(const())
    assert godunov_flux_general(F, 0.3, 1.0, 0.0) == 0.5
    assert godunov_flux_general(F, 0.3, -1.0, 1.0) == 0.0
    assert godunov_flux_general(F, 0.3, 0.7, 0.7) == pytest.approx(0.245, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 1), u=st.floats(-50, 50))
def test_general_flux_consistency(x, u):
    F = burgers_flux(make_preset("two_level", outer=1.0, inner=50.0, width=0.1))
    assert godunov_flux_general(F, x, u, u) == pytest.approx(float(F(x, u)), rel=1e-14, abs=1e-14)


def test_simplified_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.uniform(0.1, 5.0)
        ul, ur = rng.uniform(-3, 3, 2)
        fast = godunov_flux_multiplicative_convex(a, a, burgers_f, ul, ur)
        assert fast == pytest.approx(brute_godunov(lambda t: a * burgers_f(t), ul, ur), abs=1e-8)


def test_simplified_reduces_to_classical_when_sides_agree():
    rng = np.random.default_rng(1)
    ul, ur = rng.uniform(-2, 2, (2, 500))
    F = burgers_flux(const(1.7))
    np.testing.assert_allclose(godunov_flux_multiplicative_convex(1.7, 1.7, burgers_f, ul, ur),
                               godunov_flux_general(F, 0.5, ul, ur), atol=1e-14)


def test_golden_section_general_flux():
    flux = FluxModel.general(lambda x, u: (1 + x) * (u**4 / 4 + u),
                             lambda x, u: (1 + x) * (u**3 + 1))
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.uniform(0, 1)
        ul, ur = rng.uniform(-2, 2, 2)
        oracle = brute_godunov(lambda t: (1 + x) * (t**4 / 4 + t), ul, ur)
        assert godunov_flux_general(flux, x, ul, ur) == pytest.approx(oracle, abs=1e-8)


def test_flux_model_validation():
    with pytest.raises(ValueError):
        FluxModel("multiplicative")
    with pytest.raises(ValueError):
        FluxModel("odd")


# -- time stepping ---------------------------------------------------------------

def test_cfl_dt_example():
    mesh = build_equidistant(100)
    dt = cfl_dt(burgers_flux(const(2.0)), mesh, np.array([0.5, -0.2] * 50), 0.9)
    assert dt == pytest.approx(0.009, rel=1e-12)


def test_cfl_dt_zero_speed_returns_remaining():
    mesh = build_equidistant(10)
    assert cfl_dt(burgers_flux(const()), mesh, np.zeros(10), 0.9, remaining=0.37) == 0.37


def test_cfl_dt_scales_with_min_h():
    u = np.full(10, 0.5)
    F = burgers_flux(const())
    d1 = cfl_dt(F, build_equidistant(10), u, 0.5)
    d2 = cfl_dt(F, build_equidistant(20), np.full(20, 0.5), 0.5)
    assert d1 == pytest.approx(2 * d2, rel=1e-12)


def test_constant_state_is_steady():
    mesh = build_jump_adapted(16, [0.3])
    F = burgers_flux(const(1.3))
    u = np.full(mesh.n_cells, 0.8)
    np.testing.assert_allclose(forward_euler_step(F, mesh, u, 0.01), u, rtol=0, atol=1e-15)


def test_single_cell_unchanged():
    mesh = build_equidistant(1)
    F = burgers_flux(const())
    assert forward_euler_step(F, mesh, np.array([0.4]), 0.1)[0] == 0.4


def test_periodic_closure():
    mesh = build_equidistant(8)
    F = burgers_flux(const())
    flux = interface_fluxes(F, mesh, np.linspace(-1, 1, 8))
    assert flux[0] == flux[-1]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 80))
def test_step_conserves_mass(seed, n):
    rng = np.random.default_rng(seed)
    coef = make_preset("alternating_fixed", rng, n_jumps=3)
    mesh = build_jump_adapted(n, coef.discontinuities)
    F = burgers_flux(coef)
    u = rng.uniform(-2, 2, mesh.n_cells)
    dt = cfl_dt(F, mesh, u, 0.9)
    u1 = forward_euler_step(F, mesh, u, dt)
    assert abs(u1 @ mesh.cell_sizes - u @ mesh.cell_sizes) <= 1e-13 * (1 + abs(u @ mesh.cell_sizes))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 10))
def test_maximum_principle_constant_coefficient(seed, a):
    rng = np.random.default_rng(seed)
    mesh = build_equidistant(50)
    u0 = rng.uniform(-1, 1, 50)
    sol = solve(burgers_flux(const(a)), mesh, u0, SolverConfig(t_end=0.3, cfl_number=0.9),
                np.linspace(0, 0.3, 7))
    assert sol.states.min() >= u0.min() - 1e-14
    assert sol.states.max() <= u0.max() + 1e-14


def test_explicit_shock_oracle():
    mesh = build_equidistant(256)
    sol = solve(burgers_flux(const()), mesh, lambda x: np.where(x < 0.5, 1.0, 0.0),
                SolverConfig(t_end=0.25))
    exact = init_cell_averages(lambda x: riemann_exact(x, 0.25), mesh)
    assert np.sum(np.abs(sol.final - exact) * mesh.cell_sizes) <= 5 * mesh.max_h


def test_compiled_path_matches_numpy_path():
    coef = make_preset("alternating_exponential", 4, n_quad=128)
    mesh = refine_wave_cells(build_jump_adapted(64, coef.discontinuities))
    u0 = lambda x: 0.3 * np.sin(np.pi * x)  # noqa: E731
    cfg = SolverConfig(t_end=0.5)
    fast = solve(burgers_flux(coef), mesh, u0, cfg, [0.25])
    generic = FluxModel.multiplicative(coef, burgers_f, lambda u: u)
    slow = solve(generic, mesh, u0, cfg, [0.25])
    assert fast.n_steps == slow.n_steps
    np.testing.assert_allclose(fast.states, slow.states, rtol=0, atol=1e-13)
    assert fast.max_mass_drift <= 1e-13


def test_backward_euler_constant_state():
    mesh = build_equidistant(10)
    u = np.full(10, 0.6)
    v, its = backward_euler_step(burgers_flux(const()), mesh, u, 0.5)
    assert its <= 1
    np.testing.assert_allclose(v, u, atol=1e-15)


def test_backward_euler_small_step_matches_explicit():
    mesh = build_equidistant(32)
    F = burgers_flux(const())
    u = init_cell_averages(lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x), mesh)
    implicit, _ = backward_euler_step(F, mesh, u, 1e-6, newton_tol=1e-14)
    explicit = forward_euler_step(F, mesh, u, 1e-6)
    assert np.max(np.abs(implicit - explicit)) <= 1e-10


def test_backward_euler_conserves_mass():
    mesh = build_jump_adapted(40, [0.31, 0.77])
    F = burgers_flux(make_preset("two_level", outer=1.0, inner=5.0, width=0.2))
    u = init_cell_averages(lambda x: np.sin(2 * np.pi * x) + 0.2, mesh)
    v, _ = backward_euler_step(F, mesh, u, 0.05)
    assert abs(v @ mesh.cell_sizes - u @ mesh.cell_sizes) <= 1e-10 * mesh.n_cells


def test_backward_euler_reports_failure():
    mesh = build_equidistant(20)
    u = init_cell_averages(lambda x: np.sin(2 * np.pi * x), mesh)
    with pytest.raises(NewtonFailure):
        backward_euler_step(burgers_flux(const()), mesh, u, 0.5, newton_tol=1e-300,
                            newton_max_iter=1)


def test_implicit_and_explicit_agree():
    mesh = build_equidistant(128)
    F = burgers_flux(make_preset("two_level", outer=10.5, inner=20.0, width=0.1))
    u0 = lambda x: 0.3 * np.sin(np.pi * x)  # noqa: E731
    ex = solve(F, mesh, u0, SolverConfig(t_end=0.2))
    dt = 0.2 / ex.n_steps
    im = solve(F, mesh, u0, SolverConfig("backward_euler", t_end=0.2, dt=dt))
    assert np.sum(np.abs(ex.final - im.final) * mesh.cell_sizes) <= 10 * dt


# -- driver -------------------------------------------------------------------------

def test_solution_records_requested_times(tmp_path):
    mesh = build_equidistant(16)
    sol = solve(burgers_flux(const()), mesh, lambda x: np.sin(np.pi * x),
                SolverConfig(t_end=0.4), [0.0, 0.1, 0.3])
    np.testing.assert_allclose(sol.times, [0, 0.1, 0.3, 0.4])
    assert sol.states.shape == (4, 16)
    np.testing.assert_array_equal(sol.at(0.1), sol.states[1])
    with pytest.raises(KeyError):
        sol.at(0.2)
    sol.snapshots_to_csv(tmp_path / "s.csv")
    sol.mass_to_csv(tmp_path / "m.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,x_center,u"
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 4 * 16
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "step,t,mass"


def test_flux_bound_diagnostic():
    mesh = build_equidistant(32)
    sol = solve(burgers_flux(const(2.0)), mesh, lambda x: np.sin(2 * np.pi * x),
                SolverConfig(t_end=0.1))
    u0 = init_cell_averages(lambda x: np.sin(2 * np.pi * x), mesh)
    assert sol.flux_bound == pytest.approx(np.max(u0**2), rel=1e-12)


def test_solve_is_deterministic():
    coef = make_preset("inclusions", 5)
    mesh = refine_wave_cells(build_jump_adapted(128, coef.discontinuities))
    runs = [solve(burgers_flux(coef), mesh, lambda x: 0.3 * np.sin(np.pi * x)).final
            for _ in range(2)]
    assert runs[0].tobytes() == runs[1].tobytes()


def test_non_finite_state_aborts():
    mesh = build_equidistant(8)
    u0 = np.zeros(8)
    u0[3] = np.nan
    with pytest.raises(SolverError):
        solve(burgers_flux(const()), mesh, u0, SolverConfig(t_end=0.1))
    with pytest.raises(SolverError):
        solve(burgers_flux(const()), mesh, u0, SolverConfig("backward_euler", t_end=0.1))


@pytest.mark.parametrize("kwargs", [dict(cfl_number=1.0), dict(t_end=0.0),
                                    dict(integrator="rk4"), dict(bc="dirichlet")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_estimator_interface():
    mesh = build_equidistant(32)
    est = GodunovSolver(t_end=0.2).fit(mesh, coefficient=const())
    u = est.predict(lambda x: np.sin(np.pi * x))
    assert u.shape == (32,)
    assert est.get_params()["t_end"] == 0.2
    with pytest.raises(ValueError):
        GodunovSolver().fit(mesh)


def test_mass_drift_tracked():
    coef = make_preset("poisson_sqexp", 8, n_quad=128)
    mesh = build_jump_adapted(64, coef.discontinuities)
    sol = solve(burgers_flux(coef), mesh, lambda x: 0.3 * np.sin(np.pi * x))
    assert sol.mass_trace.size == sol.n_steps + 1
    assert math.isclose(sol.max_mass_drift, np.max(np.abs(sol.mass_trace - sol.mass_trace[0])))
