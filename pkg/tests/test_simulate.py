import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskhjb.errors import InvalidStart, NonpositiveStep
from riskhjb.model import CostSpec, RectAnnulus, SdeModel, constant, quadratic
from riskhjb.simulate import (TrajectoryBatch, estimate_cost, euler_maruyama_rollout,
                              exit_time_of_path, mc_failure_probability, stopped_paths)

from conftest import planar_model

LINE = RectAnnulus([-2.0], [2.0])


def still_model(n=2):
    return SdeModel.linear(np.zeros((n, n)), np.eye(n), np.zeros((n, n)))


def test_zero_dynamics_stay_put(box):
    x0 = np.array([0.1, -0.2])
    b = euler_maruyama_rollout(still_model(), None, box, x0, 0.0, 1.0, 0.01, 5, seed=3)
    assert np.all(b.states == x0)
    assert np.all(b.exit_time == 1.0) and not b.exit_flag.any()


def test_single_euler_step():
    model = SdeModel.linear([[-0.5]], [[1.0]], [[0.1]])
    out = stopped_paths(model, None, LINE, np.array([[1.0]]), 0.0, 0.01, np.zeros((1, 1, 1)))
    assert out["states"][0, 1, 0] == pytest.approx(0.995, abs=1e-15)


def test_deterministic_crossing(box):
    model = SdeModel.linear(np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)))
    push = lambda x, t: np.tile([10.0, 0.0], (len(x), 1))
    b = euler_maruyama_rollout(model, push, box, np.array([0.45, 0.0]), 0.0, 1.0, 0.01, 3, 0)
    assert b.exit_flag.all()
    assert np.allclose(b.exit_time, 0.01)
    assert np.all(np.isnan(b.states[:, 2:]))


def test_rollout_errors(box):
    with pytest.raises(InvalidStart):
        euler_maruyama_rollout(planar_model(), None, box, np.array([0.5, 0.0]), 0, 1, 0.01, 2, 0)
    with pytest.raises(NonpositiveStep):
        euler_maruyama_rollout(planar_model(), None, box, np.zeros(2), 0, 1, 0.0, 2, 0)


def test_exit_time_of_path_cases():
    times = np.linspace(0.0, 1.0, 11)
    inside = np.zeros((11, 1))
    assert exit_time_of_path(inside, LINE, times) == (1.0, False)
    path = inside.copy()
    path[3:] = 3.0
    assert exit_time_of_path(path, LINE, times) == (pytest.approx(0.3), True)
    path = inside.copy()
    path[0] = 2.0
    assert exit_time_of_path(path, LINE, times) == (0.0, True)


def test_all_paths_exit():
    model = SdeModel.linear([[0.0]], [[1.0]], [[0.1]])
    push = lambda x, t: np.full((len(x), 1), 1000.0)
    b = euler_maruyama_rollout(model, push, LINE, np.array([1.99]), 0.0, 1.0, 0.01, 100, 1)
    assert mc_failure_probability(b) == (1.0, 0.0)


def test_strong_inward_drift_never_fails(box):
    model = SdeModel.linear(-10.0 * np.eye(2), np.eye(2), 1e-4 * np.eye(2))
    b = euler_maruyama_rollout(model, None, box, np.array([0.01, 0.01]), 0, 2, 0.01, 500, 7)
    assert mc_failure_probability(b)[0] == 0.0


def test_standard_error_formula(box):
    b = euler_maruyama_rollout(planar_model(0.3), None, box, np.array([0.3, 0.3]), 0, 2, 0.01,
                               400, 2)
    p, se = mc_failure_probability(b)
    assert 0 < p < 1
    assert se == pytest.approx(np.sqrt(p * (1 - p) / 400))


def test_trivial_cost_is_zero(box):
    cost = CostSpec.scalar_weight(2, 1.0, constant(0.0), constant(0.0), 0.0)
    b = euler_maruyama_rollout(planar_model(), None, box, np.zeros(2), 0, 1, 0.01, 50, 0,
                               cost=cost)
    assert estimate_cost(b, cost) == 0.0


def test_unit_running_cost_integrates_horizon(box):
    cost = CostSpec.scalar_weight(2, 1.0, constant(0.0), constant(1.0), 0.0)
    b = euler_maruyama_rollout(still_model(), None, box, np.zeros(2), 0.0, 1.5, 0.01, 4, 0,
                               cost=cost)
    assert estimate_cost(b, cost) == pytest.approx(1.5, abs=1e-12)


def test_stopped_cost_accumulation(box):
    cost = CostSpec.scalar_weight(2, 1.0, quadratic(1.0), constant(1.0), 0.7)
    b = euler_maruyama_rollout(planar_model(0.3), None, box, np.array([0.4, 0.4]), 0, 2, 0.01,
                               300, 5, cost=cost)
    assert np.allclose(b.running_integral, 0.01 * b.exit_step)
    assert np.all(b.terminal_cost[b.exit_flag] == 0.7)
    safe = ~b.exit_flag
    assert np.allclose(b.terminal_cost[safe], np.sum(b.final_state[safe] ** 2, axis=1))
    assert np.allclose(estimate_cost(b, cost), b.running_cost.mean())


@pytest.mark.parametrize("bridge", [False, True])
def test_results_independent_of_workers(box, bridge):
    args = (planar_model(0.2), None, box, np.array([0.3, -0.1]), 0.0, 1.0, 0.01, 2500, 11)
    cost = CostSpec.scalar_weight(2, 1.0, quadratic(1.0), quadratic(1.0), 0.1)
    a = euler_maruyama_rollout(*args, cost=cost, workers=1, bridge=bridge)
    b = euler_maruyama_rollout(*args, cost=cost, workers=4, bridge=bridge)
    for name in ("states", "exit_step", "exit_flag", "running_integral", "first_noise"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_bridge_only_adds_exits(box):
    args = (planar_model(0.2), None, box, np.array([0.4, 0.0]), 0.0, 1.0, 0.01, 2000, 3)
    plain = euler_maruyama_rollout(*args)
    bridged = euler_maruyama_rollout(*args, bridge=True)
    assert np.all(bridged.exit_flag | ~plain.exit_flag)
    assert bridged.exit_flag.sum() > plain.exit_flag.sum()


def test_bridge_matches_reflection_principle():
    # driftless motion near a single wall: the bridge test is exact even at coarse dt
    from scipy.stats import norm
    sigma, a, T = 0.1, 0.05, 1.0
    safe = RectAnnulus([0.0, -10.0], [10.0, 10.0])
    model = SdeModel.linear(np.zeros((2, 2)), np.eye(2), sigma * np.eye(2))
    args = (model, None, safe, np.array([a, 0.0]), 0.0, T, 0.1, 4000, 11)
    exact = 2.0 * norm.cdf(-a / (sigma * np.sqrt(T)))
    bridged = euler_maruyama_rollout(*args, bridge=True).exit_flag.mean()
    naive = euler_maruyama_rollout(*args).exit_flag.mean()
    se = np.sqrt(exact * (1 - exact) / 4000)
    assert abs(bridged - exact) < 3 * se
    assert naive < exact - 5 * se


def test_bridge_ignores_planes_beyond_obstacle_corner(annulus):
    # a step diagonally past the obstacle corner never enters the obstacle slab
    x_old = np.array([[0.05, 0.25]])
    x_new = np.array([[0.25, 0.25]])
    var = np.array([1e-4])
    p = annulus.crossing_probability(x_old, x_new, var)
    far = RectAnnulus([-0.5, -0.5], [0.5, 0.5]).crossing_probability(x_old, x_new, var)
    assert p[0] == pytest.approx(far[0], abs=1e-15)
    beside = annulus.crossing_probability(np.array([[0.15, 0.21]]), np.array([[0.16, 0.21]]), var)
    assert beside[0] == pytest.approx(np.exp(-2 * 0.01 * 0.01 / 1e-4), rel=1e-6)


def test_path_prefix_independent_of_batch_size(box):
    args = (planar_model(0.2), None, box, np.array([0.3, -0.1]), 0.0, 1.0, 0.01)
    small = euler_maruyama_rollout(*args, 10, 4)
    large = euler_maruyama_rollout(*args, 1500, 4)
    np.testing.assert_array_equal(small.states, large.states[:10])


def _batch(flags):
    flags = np.asarray(flags, dtype=bool)
    n = flags.size
    z = np.zeros(n)
    return TrajectoryBatch(0.0, 1.0, 0.5, np.zeros((n, 3, 1)), np.full(n, 2), flags, z, z,
                           np.zeros((n, 1)), np.zeros((n, 1)), np.zeros((n, 1)))


@settings(max_examples=100, deadline=None)
@given(a=st.lists(st.booleans(), min_size=1, max_size=50),
       b=st.lists(st.booleans(), min_size=1, max_size=50))
def test_failure_estimate_pools(a, b):
    pa, _ = mc_failure_probability(_batch(a))
    pb, _ = mc_failure_probability(_batch(b))
    pab, se = mc_failure_probability(_batch(a + b))
    assert 0.0 <= pab <= 1.0 and se >= 0.0
    assert pab == pytest.approx((len(a) * pa + len(b) * pb) / (len(a) + len(b)), abs=1e-15)
