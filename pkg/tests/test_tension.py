import numpy as np
import pytest

from whipflow import (ArcState, GeodesicTensionProblem, Grid,
                      ScenarioSpec, TensionProfile, build,
                      counterexample_tension, solve_tension,
                      tension_for_state)
from whipflow.errors import ShapeError, UnderResolvedError


def constant_problem(grid, c, f, nu):
    return GeodesicTensionProblem(
        grid=grid,
        curvature_sq=np.full(grid.n_nodes, c),
        speed_sq=np.full(grid.n_nodes, f),
        neumann_value=nu,
    )


def closed_form_end_value(a):
    # sigma'' - a^2 sigma + 1 = 0, sigma(0) = 0, sigma'(1) = 0
    return (1.0 - 1.0 / np.cosh(a)) / a ** 2


def test_profile_requires_pinned_origin():
    grid = Grid(4)
    with pytest.raises(ValueError):
        TensionProfile(grid=grid, values=np.array([0.1, 0, 0, 0, 0.0]))
    with pytest.raises(ShapeError):
        TensionProfile(grid=grid, values=np.zeros(4))


def test_affine_solutions_exact():
    grid = Grid(113)
    up = solve_tension(constant_problem(grid, 0.0, 0.0, 1.0))
    np.testing.assert_allclose(up.values, grid.nodes, atol=1e-12)
    down = solve_tension(constant_problem(grid, 0.0, 0.0, -1.0))
    np.testing.assert_allclose(down.values, -grid.nodes, atol=1e-12)


def test_constant_coefficient_closed_form():
    a = 10.0
    grid = Grid(2000)
    profile = solve_tension(constant_problem(grid, a * a, 1.0, 0.0))
    exact = closed_form_end_value(a)
    assert abs(profile.at_end - exact) / exact <= 1e-6


def test_second_order_convergence_against_closed_form():
    a = 10.0
    exact = closed_form_end_value(a)
    errors = []
    for n in (250, 500, 1000):
        profile = solve_tension(constant_problem(Grid(n), a * a, 1.0, 0.0))
        errors.append(abs(profile.at_end - exact))
    for coarse, fine in zip(errors, errors[1:]):
        order = np.log2(coarse / fine)
        assert 1.8 <= order <= 2.2


def test_discrete_system_residual_is_tiny():
    rng = np.random.default_rng(3)
    grid = Grid(300)
    c = rng.uniform(0.0, 50.0, size=grid.n_nodes)
    f = rng.uniform(0.0, 2.0, size=grid.n_nodes)
    nu = 0.4
    sigma = solve_tension(GeodesicTensionProblem(
        grid=grid, curvature_sq=c, speed_sq=f, neumann_value=nu)).values
    h = grid.h
    interior = (sigma[:-2] - 2.0 * sigma[1:-1] + sigma[2:]) / h ** 2 \
        - c[1:-1] * sigma[1:-1] + f[1:-1]
    end_row = 2.0 * (sigma[-2] - sigma[-1]) / h ** 2 + 2.0 * nu / h \
        - c[-1] * sigma[-1] + f[-1]
    scale = np.abs(sigma).max() / h ** 2 + np.abs(f).max() + 1.0
    assert np.abs(interior).max() <= 1e-12 * scale
    assert abs(end_row) <= 1e-12 * scale
    assert sigma[0] == 0.0


def test_tension_for_vertical_states(gravity2):
    grid = Grid(200)
    down = build(ScenarioSpec(kind="vertical_down"), grid, gravity2)
    np.testing.assert_allclose(tension_for_state(down, gravity2).values,
                               grid.nodes, atol=1e-10)
    up = build(ScenarioSpec(kind="vertical_up"), grid, gravity2)
    np.testing.assert_allclose(tension_for_state(up, gravity2).values,
                               -grid.nodes, atol=1e-10)


def right_angle_hook(grid, g):
    """Quarter-circle hook rotated so the discrete end tangent is exactly
    orthogonal to gravity (the raw builder leaves an O(h) angle because the
    chord at the pin lags the continuum tangent)."""
    state = build(ScenarioSpec(kind="quarter_circle"), grid, g)
    u_end = state.tangents[-1]
    perp = np.array([-g.direction[1], g.direction[0]])
    theta = np.arctan2(float(u_end @ g.direction), float(u_end @ perp))
    delta = (0.0 if abs(theta) < np.pi / 2 else np.pi) - theta
    rot = np.cos(delta) * (np.outer(perp, perp)
                           + np.outer(g.direction, g.direction)) \
        + np.sin(delta) * (np.outer(g.direction, perp)
                           - np.outer(perp, g.direction))
    return ArcState(grid=grid, positions=state.positions @ rot.T)


def test_right_angle_hook_has_zero_tension(gravity2):
    grid = Grid(400)
    hook = right_angle_hook(grid, gravity2)
    cos_alpha = -float(np.dot(gravity2.direction, hook.tangents[-1]))
    assert abs(cos_alpha) <= 1e-13
    sigma = tension_for_state(hook, gravity2)
    assert np.abs(sigma.values).max() <= 1e-8


def test_counterexample_values_and_bound():
    value, bound = counterexample_tension(0.1, np.pi / 2)
    assert bound == pytest.approx(0.01, rel=1e-12)
    assert value <= bound
    assert value == pytest.approx(0.01 * (1.0 - 1.0 / np.cosh(10.0)), rel=1e-6)

    value2, bound2 = counterexample_tension(0.05, np.pi / 2)
    assert value2 <= bound2
    assert value2 == pytest.approx(0.0025 * (1.0 - 1.0 / np.cosh(20.0)), rel=1e-6)


def test_counterexample_family_monotone():
    values = []
    for eps in (0.1, 0.05, 0.025):
        value, bound = counterexample_tension(eps, np.pi / 2)
        assert value <= bound
        values.append(value)
    assert values[0] > values[1] > values[2]


def test_counterexample_ratio_tends_to_one():
    ratios = []
    for eps in (0.1, 0.05, 0.025):
        value, bound = counterexample_tension(eps, np.pi / 2)
        ratios.append(value / bound)
    assert ratios[0] < ratios[1] < ratios[2] <= 1.0


def test_counterexample_refuses_unresolved_stiffness():
    with pytest.raises(UnderResolvedError):
        counterexample_tension(1e-6, np.pi / 2, n_cells=10)
    with pytest.raises(ValueError):
        counterexample_tension(0.1, 0.0)
    with pytest.raises(ValueError):
        counterexample_tension(-0.1, np.pi / 2)


def test_maximum_principle_positive_neumann():
    rng = np.random.default_rng(4)
    grid = Grid(200)
    c = rng.uniform(0.0, 20.0, size=grid.n_nodes)
    sigma = solve_tension(GeodesicTensionProblem(
        grid=grid, curvature_sq=c, speed_sq=np.zeros(grid.n_nodes),
        neumann_value=0.8)).values
    assert sigma.min() >= -1e-12
    assert np.diff(sigma).min() >= -1e-12
    assert np.diff(sigma, 2).min() >= -1e-10


def test_maximum_principle_negative_neumann():
    rng = np.random.default_rng(5)
    grid = Grid(200)
    c = rng.uniform(0.0, 20.0, size=grid.n_nodes)
    sigma = solve_tension(GeodesicTensionProblem(
        grid=grid, curvature_sq=c, speed_sq=np.zeros(grid.n_nodes),
        neumann_value=-0.8)).values
    assert sigma.max() <= 1e-12
    assert np.diff(sigma).max() <= 1e-12
    assert np.diff(sigma, 2).max() <= 1e-10


def test_zero_neumann_zero_solution():
    grid = Grid(150)
    sigma = solve_tension(constant_problem(grid, 7.0, 0.0, 0.0)).values
    assert np.abs(sigma).max() <= 1e-12


def test_slope_and_value_bounds():
    rng = np.random.default_rng(6)
    grid = Grid(180)
    for nu in (0.3, -0.9, 1.0):
        c = rng.uniform(0.0, 40.0, size=grid.n_nodes)
        sigma = solve_tension(GeodesicTensionProblem(
            grid=grid, curvature_sq=c, speed_sq=np.zeros(grid.n_nodes),
            neumann_value=nu)).values
        assert np.all(np.abs(sigma) <= grid.nodes * abs(nu) + 1e-10)
        assert np.abs(np.diff(sigma) / grid.h).max() <= abs(nu) + 1e-10


def test_nonnegative_with_source():
    rng = np.random.default_rng(7)
    grid = Grid(160)
    sigma = solve_tension(GeodesicTensionProblem(
        grid=grid,
        curvature_sq=rng.uniform(0.0, 30.0, size=grid.n_nodes),
        speed_sq=rng.uniform(0.0, 3.0, size=grid.n_nodes),
        neumann_value=0.0)).values
    assert sigma.min() >= -1e-12


def test_problem_validation():
    grid = Grid(10)
    with pytest.raises(ValueError):
        GeodesicTensionProblem(grid=grid, curvature_sq=-np.ones(11),
                               speed_sq=np.zeros(11), neumann_value=0.0)
    with pytest.raises(ShapeError):
        GeodesicTensionProblem(grid=grid, curvature_sq=np.zeros(10),
                               speed_sq=np.zeros(11), neumann_value=0.0)
