import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskhjb.errors import TimeOutOfRange
from riskhjb.fdm import FieldSeries, Grid, build_stencils
from riskhjb.model import CostSpec, Problem, RectAnnulus, quadratic
from riskhjb.policy import PolicyTable, policy_from_value

from conftest import planar_model

ANNULUS = RectAnnulus([-0.5, -0.5], [0.5, 0.5], [0.1, 0.1], [0.2, 0.2])


def problem_with_weight(weight=1.0):
    cost = CostSpec.scalar_weight(2, weight, quadratic(1.0), quadratic(1.0), 0.1)
    return Problem(planar_model(0.1 * np.sqrt(1.0 / weight)), ANNULUS, cost, 0.0, 1.0)


def series(grid, fn, times=(0.0, 0.5, 1.0)):
    x = grid.points
    vals = np.stack([fn(x, t).reshape(grid.shape) for t in times])
    return FieldSeries(grid, np.array(times), vals)


@pytest.fixture(scope="module")
def quad_table():
    grid = Grid(ANNULUS, (41, 41))
    S = build_stencils(grid, 4)
    J = series(grid, lambda x, t: np.sum(x ** 2, axis=1))
    return grid, policy_from_value(J, problem_with_weight(), S)


def test_constant_value_gives_zero_control():
    grid = Grid(ANNULUS, (21, 21))
    J = series(grid, lambda x, t: np.full(len(x), 0.3))
    table = policy_from_value(J, problem_with_weight(), build_stencils(grid, 4))
    assert np.abs(table.values).max() < 1e-10


def test_quadratic_value_gives_linear_feedback(quad_table):
    grid, table = quad_table
    u = table.values[0].reshape(-1, 2)[grid.valid_idx]
    assert np.allclose(u, -2.0 * grid.points[grid.valid_idx], atol=1e-10)


def test_lookup_on_nodes_is_exact(quad_table):
    grid, table = quad_table
    i = grid.interior_idx[::37]
    got = table.lookup(grid.points[i], 0.5)
    np.testing.assert_array_equal(got, table.values[1].reshape(-1, 2)[i])


def test_lookup_midpoint_is_average(quad_table):
    grid, table = quad_table
    a, b = grid.points[100], grid.points[101]
    got = table.lookup(0.5 * (a + b), 0.0)
    want = 0.5 * (table.values[0].reshape(-1, 2)[100] + table.values[0].reshape(-1, 2)[101])
    assert np.allclose(got, want, atol=1e-14)


def test_lookup_time_blending():
    axes = [np.linspace(0, 1, 3), np.linspace(0, 1, 3)]
    vals = np.stack([np.zeros((3, 3, 1)), np.ones((3, 3, 1))])
    table = PolicyTable(axes, [0.0, 1.0], vals)
    assert table.lookup(np.array([0.3, 0.6]), 0.25)[0] == pytest.approx(0.25)
    with pytest.raises(TimeOutOfRange):
        table.lookup(np.array([0.3, 0.6]), 1.5)


def test_out_of_box_query_is_clamped_and_flagged(quad_table):
    grid, table = quad_table
    u, flag = table.lookup(np.array([0.7, 0.0]), 0.0, return_flags=True)
    assert flag
    np.testing.assert_array_equal(u, table.lookup(np.array([0.5, 0.0]), 0.0))


def test_random_queries_within_bilinear_bound(quad_table):
    grid, table = quad_table
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, (2000, 2))
    x = x[ANNULUS.classify(x) == 0]
    err = np.abs(table.lookup(x, 0.0) + 2.0 * x).max(axis=0)
    # u = -2x is bilinear-exact, so the bound is zero up to rounding
    assert np.all(err <= table.interpolation_bound(0.0) + 1e-12)


def test_bilinear_bound_for_curved_field():
    grid = Grid(ANNULUS, (41, 41))
    x = grid.points
    u = np.stack([np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]), x[:, 0] ** 2 - x[:, 1] ** 2], 1)
    table = PolicyTable(grid.axes, [0.0], u.reshape(1, 41, 41, 2))
    q = np.random.default_rng(1).uniform(-0.5, 0.5, (3000, 2))
    exact = np.stack([np.sin(3 * q[:, 0]) * np.cos(2 * q[:, 1]), q[:, 0] ** 2 - q[:, 1] ** 2], 1)
    err = np.abs(table.lookup(q, 0.0) - exact).max(axis=0)
    assert np.all(err <= table.interpolation_bound(0.0) * 1.05)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.1, 10.0))
def test_control_weight_scaling(c):
    grid = Grid(ANNULUS, (15, 15))
    S = build_stencils(grid, 2)
    J = series(grid, lambda x, t: np.sin(x[:, 0]) * (1 + x[:, 1]) + t, times=(0.0,))
    u1 = policy_from_value(J, problem_with_weight(1.0), S).values
    uc = policy_from_value(J, problem_with_weight(c), S).values
    assert np.allclose(uc, u1 / c, rtol=1e-12, atol=1e-14)


def test_table_roundtrip(tmp_path, quad_table):
    grid, table = quad_table
    table.save(tmp_path / "p.lut")
    back = PolicyTable.load(tmp_path / "p.lut")
    np.testing.assert_array_equal(back.values, table.values)
    np.testing.assert_array_equal(back.times, table.times)
    q = np.array([[0.31, -0.27]])
    np.testing.assert_array_equal(back.lookup(q, 0.3), table.lookup(q, 0.3))


def test_lookup_is_continuous_across_cells(quad_table):
    grid, table = quad_table
    xe = grid.axes[0][10]
    y = -0.33
    left = table.lookup(np.array([xe - 1e-12, y]), 0.0)
    right = table.lookup(np.array([xe + 1e-12, y]), 0.0)
    assert np.allclose(left, right, atol=1e-9)
