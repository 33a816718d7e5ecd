import numpy as np
import pytest

from riskhjb.errors import PositivityLoss
from riskhjb.fdm import Grid, build_stencils, solve_linearized_hjb, solve_risk_pde
from riskhjb.model import CostSpec, Problem, RectAnnulus, SdeModel, constant, quadratic
from riskhjb.policy import policy_from_value

from conftest import planar_model, planar_problem, trivial_problem


def heat_problem(sigma=1.0, T=0.5):
    """1D pure diffusion on (0, 1): unit boundary data, one Fourier mode at T."""
    model = SdeModel.linear([[0.0]], [[1.0]], [[sigma]])
    lam = sigma ** 2
    psi = lambda x, t=None: -lam * np.log(1.0 - 0.5 * np.sin(np.pi * np.asarray(x)[..., 0]))
    cost = CostSpec.scalar_weight(1, 1.0, psi, constant(0.0), 0.0)
    return Problem(model, RectAnnulus([0.0], [1.0]), cost, 0.0, T)


def heat_exact(x, t, sigma=1.0, T=0.5):
    return 1.0 - 0.5 * np.exp(-0.5 * sigma ** 2 * np.pi ** 2 * (T - t)) * np.sin(np.pi * x)


def heat_error(n, rtol):
    prob = heat_problem()
    grid = Grid(prob.safe_set, (n,))
    times = np.linspace(0.0, 0.5, 6)
    sol = solve_linearized_hjb(prob, grid, build_stencils(grid, 4), times, rtol=rtol,
                               smooth=False)
    xi = sol.xi.values * np.exp(-sol.shift / sol.lam)
    x = grid.points[:, 0]
    return max(np.abs(xi[k] - heat_exact(x, t)).max() for k, t in enumerate(times))


def test_fourier_mode_96_nodes():
    assert heat_error(96, 1e-6) < 1e-4


def test_fourier_mode_384_nodes():
    assert heat_error(384, 1e-9) < 1e-6


def test_constant_data_gives_constant_solution(annulus):
    c = 0.07
    prob = planar_problem(eta=c, safe=annulus, terminal=constant(c), running=constant(0.0))
    grid = Grid(annulus, (33, 33))
    sol = solve_linearized_hjb(prob, grid, build_stencils(grid, 4), [0.0, 1.0, 2.0])
    v = grid.valid_idx
    xi = sol.xi.values.reshape(3, -1)[:, v] * np.exp(-sol.shift / sol.lam)
    assert np.abs(xi - np.exp(-c / prob.lam)).max() < 1e-10 * np.exp(-c / prob.lam)
    assert np.abs(sol.J.values.reshape(3, -1)[:, v] - c).max() < 1e-10


def test_trivial_cost_value_is_zero(annulus):
    prob = trivial_problem(annulus)
    grid = Grid(annulus, (33, 33))
    sol = solve_linearized_hjb(prob, grid, build_stencils(grid, 4), [0.0, 1.0, 2.0])
    assert np.abs(sol.J.values.reshape(3, -1)[:, grid.valid_idx]).max() < 1e-10


def test_floor_violation_raises():
    safe = RectAnnulus([-1.5, -1.5], [1.5, 1.5])
    prob = planar_problem(eta=0.1, safe=safe)
    grid = Grid(safe, (24, 24))
    with pytest.raises(PositivityLoss):
        solve_linearized_hjb(prob, grid, build_stencils(grid, 4), [0.0, 2.0])


@pytest.fixture(scope="module")
def small_benchmark():
    safe = RectAnnulus([-0.5, -0.5], [0.5, 0.5], [0.1, 0.1], [0.2, 0.2])
    prob = planar_problem(eta=0.1, safe=safe)
    grid = Grid(safe, (32, 32))
    st = build_stencils(grid, 4)
    sol = solve_linearized_hjb(prob, grid, st, np.round(np.arange(0, 2.0001, 0.02), 10))
    return prob, grid, st, policy_from_value(sol.J, prob, st)


def test_risk_is_one_on_the_boundary(small_benchmark):
    prob, grid, st, table = small_benchmark
    res = solve_risk_pde(prob, table, grid, st, output_times=[0.0, 1.0, 2.0])
    for t in (0.0, 1.0, 2.0):
        assert res.p_fail(np.array([0.5, 0.0]), t) == 1.0
        assert res.p_fail(np.array([0.1, 0.15]), t) == 1.0


def test_risk_obeys_maximum_principle(small_benchmark):
    prob, grid, st, table = small_benchmark
    res = solve_risk_pde(prob, table, grid, st, output_times=[0.0, 0.5, 1.5])
    assert res.max_overshoot <= 1e-6


def test_risk_without_control_matches_uncontrolled_value(small_benchmark):
    prob, grid, st, _ = small_benchmark
    zero = solve_risk_pde(prob, None, grid, st)
    assert 0.0 < zero.p_fail(np.array([0.35, -0.3])) < 1.0
