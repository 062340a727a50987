import math

import numpy as np
import pytest

import oracles
from endoshift.conformal import QuantileVector
from endoshift.dynamics import AgentState, DynamicsParams, rollout_arr
from endoshift.mpc import (
    FALLBACK,
    OPTIMAL_APPROX,
    MpcProblem,
    constraint_violation,
    evaluate_cost,
    objective_and_gradient,
    plan,
    shift_warm_start,
)

P = DynamicsParams()


def random_instance(rng, H=10, n_obs=1):
    s0 = AgentState(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 2.0))
    goal = AgentState(*rng.uniform(-5, 5, 2), rng.uniform(-1, 1), 0.0)
    U = np.column_stack([rng.uniform(-0.4, 0.4, H), rng.uniform(-0.5, 0.5, H)])
    X = rollout_arr(s0.as_array(), U, P.as_array())
    # obstacles near the nominal path so the penalty is active somewhere
    obst = X[None, :, :2] + rng.normal(0, 0.4, (n_obs, H, 2))
    return s0, MpcProblem(goal=goal, horizon=H), U, obst


def test_cost_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s0, prob, U, _ = random_instance(rng)
        X = rollout_arr(s0.as_array(), U, P.as_array())
        want = oracles.mpc_cost(X, U, prob.goal.as_array())
        assert evaluate_cost(X, U, prob) == pytest.approx(want, rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        s0, prob, U, obst = random_instance(rng, n_obs=2)
        q = QuantileVector(rng.uniform(0, 0.5, prob.horizon))
        mu = 100.0
        _, g = objective_and_gradient(U, s0, obst, q, prob, mu)
        fd = np.zeros_like(U)
        h = 1e-6
        for idx in np.ndindex(U.shape):
            Up, Um = U.copy(), U.copy()
            Up[idx] += h
            Um[idx] -= h
            fd[idx] = (objective_and_gradient(Up, s0, obst, q, prob, mu)[0]
                       - objective_and_gradient(Um, s0, obst, q, prob, mu)[0]) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    assert worst < 1e-4


def test_gradient_zero_on_clamped_speed():
    s0 = AgentState(0, 0, 0, 2.99)
    prob = MpcProblem(goal=AgentState(10, 0, 0, 3.0), horizon=1, Q=(0, 0, 0, 1), Q_T=(0, 0, 0, 0), R=(0, 0))
    # pushing past v_max has no effect on the state, so d/da of the speed cost is 0
    f, g = objective_and_gradient(np.array([[0.0, 2.0]]), s0, None, None, prob, 0.0)
    assert g[0, 1] == 0.0


@pytest.mark.parametrize("seed", range(50))
def test_h1_plan_close_to_grid_optimum(seed):
    rng = np.random.default_rng(100 + seed)
    s0 = AgentState(*rng.uniform(-1, 1, 2), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2.5))
    goal = AgentState(*rng.uniform(-6, 6, 2), rng.uniform(-2, 2), 0.0)
    prob = MpcProblem(goal=goal, horizon=1)
    nxt = oracles.bicycle_step(*s0.as_array(), 0.0, 0.0)
    ang = rng.uniform(0, 2 * math.pi)
    obstacle = np.array(nxt[:2]) + rng.uniform(0.6, 1.5) * np.array([math.cos(ang), math.sin(ang)])
    grid_cost, _ = oracles.grid_plan_h1(s0.as_array(), goal.as_array(), obstacle, prob.safe_distance)
    assert math.isfinite(grid_cost)
    res = plan(s0, obstacle[None, None, :], None, prob)
    assert res.status == OPTIMAL_APPROX
    got = oracles.mpc_cost(res.states, res.controls, goal.as_array())
    assert got <= 1.05 * grid_cost + 1e-9


def test_plan_respects_tightened_margin():
    s0 = AgentState(0, 0, 0, 1.5)
    prob = MpcProblem(goal=AgentState(8, 0, 0, 0), horizon=10)
    # obstacle parked slightly off the straight line
    obst = np.tile([[2.5, 0.3]], (10, 1))[None]
    q = QuantileVector(np.full(10, 0.4))
    res = plan(s0, obst, q, prob)
    assert res.status == OPTIMAL_APPROX
    d = np.linalg.norm(res.states[:, :2] - obst[0], axis=1)
    assert d.min() >= 0.9 - prob.fallback_violation
    assert constraint_violation(res.states, obst, np.full(10, 0.9)) == pytest.approx(res.max_violation)


def test_unconstrained_plan_heads_to_goal():
    s0 = AgentState(0, 0, 0, 0)
    prob = MpcProblem(goal=AgentState(5, 0, 0, 0), horizon=10)
    res = plan(s0, None, None, prob)
    assert res.status == OPTIMAL_APPROX and res.max_violation == 0.0
    assert res.states[-1, 0] > 0.3 and abs(res.states[-1, 1]) < 1e-6
    assert res.cost < evaluate_cost(rollout_arr(s0.as_array(), np.zeros((10, 2)), P.as_array()), np.zeros((10, 2)), prob)


def test_infinite_threshold_brakes():
    s0 = AgentState(0, 0, 0, 1.0)
    prob = MpcProblem(goal=AgentState(5, 0, 0, 0), horizon=10)
    q = QuantileVector(np.r_[np.zeros(9), math.inf])
    res = plan(s0, np.zeros((1, 10, 2)) + 4.0, q, prob)
    assert res.status == FALLBACK
    v = res.states[:, 3]
    assert np.all(np.diff(np.r_[1.0, v]) <= 0) and v[-1] == pytest.approx(0.0, abs=1e-12) and v.min() >= 0


def test_unavoidable_collision_falls_back():
    s0 = AgentState(0, 0, 0, 2.5)
    prob = MpcProblem(goal=AgentState(8, 0, 0, 0), horizon=5)
    obst = np.tile([[0.3, 0.0]], (5, 1))[None]  # already inside the margin
    res = plan(s0, obst, QuantileVector(np.full(5, 1.0)), prob)
    assert res.status == FALLBACK and res.max_violation > prob.fallback_violation


def test_warm_start_shift():
    U = np.arange(8.0).reshape(4, 2)
    assert shift_warm_start(U).tolist() == [[2, 3], [4, 5], [6, 7], [6, 7]]


def test_plan_is_deterministic():
    rng = np.random.default_rng(5)
    s0, prob, U, obst = random_instance(rng)
    a = plan(s0, obst, None, prob, U)
    b = plan(s0, obst, None, prob, U)
    assert np.array_equal(a.controls, b.controls)


def test_problem_validation():
    with pytest.raises(ValueError):
        MpcProblem(goal=AgentState(0, 0, 0, 0), horizon=0)
    with pytest.raises(ValueError):
        MpcProblem(goal=AgentState(0, 0, 0, 0), R=(1.0,))
