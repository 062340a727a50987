"""Receding-horizon goal-reaching planner with conformal collision margins.

The optimisation is over the control sequence only: states come from a
single-shooting rollout, so dynamics always hold exactly.  Collision
constraints ``|p_k - Yhat_k,j| >= safe_distance + q_k`` enter as a squared
hinge penalty whose weight is raised through a fixed schedule.  Each level
runs projected gradient descent with an Armijo backtracking step; the gradient
is computed by a backward (adjoint) sweep through the rollout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .conformal import QuantileVector
from .dynamics import AgentState, DynamicsParams, rollout_arr, step_arr

FALLBACK = "fallback"
OPTIMAL_APPROX = "optimal-approx"

SPEED_COST = 0.01


@dataclass(frozen=True)
class MpcProblem:
    goal: AgentState
    horizon: int = 10
    Q: tuple = (1.0, 1.0, 0.001, 0.1)
    R: tuple = (0.001, 0.01)
    Q_T: tuple = (5.0, 5.0, 0.01, 5.5)
    safe_distance: float = 0.5
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    penalty_weights: tuple = (10.0, 1e2, 1e3, 1e4)
    iters_per_level: int = 60
    fallback_violation: float = 1e-2

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.Q) != 4 or len(self.Q_T) != 4 or len(self.R) != 2:
            raise ValueError("Q and Q_T need 4 diagonal entries, R needs 2")
        if min(self.Q) < 0 or min(self.R) < 0 or min(self.Q_T) < 0:
            raise ValueError("weights must be non-negative")
        if self.safe_distance < 0:
            raise ValueError("safe_distance must be non-negative")


@dataclass
class PlanResult:
    controls: np.ndarray  # (H, 2)
    states: np.ndarray  # (H, 4): x_{t+1|t} .. x_{t+H|t}
    status: str
    max_violation: float
    cost: float


# --- compiled kernels ---------------------------------------------------------


@njit(cache=True)
def _clip_controls(U, phi_max, a_max):
    out = np.empty_like(U)
    for k in range(U.shape[0]):
        out[k, 0] = min(max(U[k, 0], -phi_max), phi_max)
        out[k, 1] = min(max(U[k, 1], -a_max), a_max)
    return out


@njit(cache=True)
def _forward(U, s0, p):
    # same update as dynamics.step_arr, written in place to avoid allocations
    l, dt, v_max, v_min = p[0], p[1], p[4], p[5]
    H = U.shape[0]
    X = np.empty((H + 1, 4))
    clamped = np.zeros(H, dtype=np.bool_)
    X[0, 0], X[0, 1], X[0, 2], X[0, 3] = s0[0], s0[1], s0[2], s0[3]
    for k in range(H):
        th, v = X[k, 2], X[k, 3]
        X[k + 1, 0] = X[k, 0] + dt * v * math.cos(th)
        X[k + 1, 1] = X[k, 1] + dt * v * math.sin(th)
        X[k + 1, 2] = th + dt * v / l * math.tan(U[k, 0])
        vn = v + dt * U[k, 1]
        if vn > v_max:
            vn = v_max
            clamped[k] = True
        elif vn < v_min:
            vn = v_min
            clamped[k] = True
        X[k + 1, 3] = vn
    return X, clamped


@njit(cache=True)
def _stage_cost(X, U, goal, Qd, Rd, QTd):
    H = U.shape[0]
    c = 0.0
    for k in range(1, H + 1):
        for i in range(4):
            e = X[k, i] - goal[i]
            c += Qd[i] * e * e
        c += Rd[0] * U[k - 1, 0] ** 2 + Rd[1] * U[k - 1, 1] ** 2
        c += SPEED_COST * X[k, 3]
    for i in range(4):
        e = X[H, i] - goal[i]
        c += QTd[i] * e * e
    return c


@njit(cache=True)
def _shortfall(X, obst, dmin):
    """Sum of squared constraint shortfalls and the largest single shortfall."""
    H, M = obst.shape[0], obst.shape[1]
    pen = 0.0
    worst = 0.0
    for k in range(H):
        for j in range(M):
            dx = X[k + 1, 0] - obst[k, j, 0]
            dy = X[k + 1, 1] - obst[k, j, 1]
            s = dmin[k] - math.sqrt(dx * dx + dy * dy)
            if s > 0:
                pen += s * s
                if s > worst:
                    worst = s
    return pen, worst


@njit(cache=True)
def _objective(U, s0, goal, Qd, Rd, QTd, obst, dmin, mu, p):
    X, _ = _forward(U, s0, p)
    pen, _ = _shortfall(X, obst, dmin)
    return _stage_cost(X, U, goal, Qd, Rd, QTd) + mu * pen


@njit(cache=True)
def _objective_grad(U, s0, goal, Qd, Rd, QTd, obst, dmin, mu, p):
    l, dt = p[0], p[1]
    H, M = U.shape[0], obst.shape[1]
    X, clamped = _forward(U, s0, p)
    pen, _ = _shortfall(X, obst, dmin)
    f = _stage_cost(X, U, goal, Qd, Rd, QTd) + mu * pen

    g = np.empty((H, 2))
    lam = np.zeros(4)
    gx = np.empty(4)
    for k in range(H, 0, -1):
        for i in range(4):
            gx[i] = 2.0 * Qd[i] * (X[k, i] - goal[i])
        gx[3] += SPEED_COST
        if k == H:
            for i in range(4):
                gx[i] += 2.0 * QTd[i] * (X[k, i] - goal[i])
        for j in range(M):
            dx = X[k, 0] - obst[k - 1, j, 0]
            dy = X[k, 1] - obst[k - 1, j, 1]
            dist = math.sqrt(dx * dx + dy * dy)
            s = dmin[k - 1] - dist
            if s > 0:
                if dist > 0:
                    nx, ny = dx / dist, dy / dist
                else:
                    nx, ny = 1.0, 0.0
                gx[0] -= 2.0 * mu * s * nx
                gx[1] -= 2.0 * mu * s * ny
        for i in range(4):
            lam[i] += gx[i]

        th, v = X[k - 1, 2], X[k - 1, 3]
        phi = U[k - 1, 0]
        cphi = math.cos(phi)
        g[k - 1, 0] = 2.0 * Rd[0] * phi + lam[2] * dt * v / (l * cphi * cphi)
        g[k - 1, 1] = 2.0 * Rd[1] * U[k - 1, 1]
        lam_v = lam[3]
        if clamped[k - 1]:
            lam_v = 0.0
        else:
            g[k - 1, 1] += lam_v * dt
        ct, st = math.cos(th), math.sin(th)
        new_th = lam[0] * (-dt * v * st) + lam[1] * (dt * v * ct) + lam[2]
        new_v = lam[0] * dt * ct + lam[1] * dt * st + lam[2] * dt / l * math.tan(phi) + lam_v
        lam[2] = new_th
        lam[3] = new_v
    return f, g


@njit(cache=True)
def _solve(U0, s0, goal, Qd, Rd, QTd, obst, dmin, p, mus, iters):
    phi_max, a_max = p[2], p[3]
    U = _clip_controls(U0, phi_max, a_max)
    for mu in mus:
        f, g = _objective_grad(U, s0, goal, Qd, Rd, QTd, obst, dmin, mu, p)
        alpha = 1.0
        for _ in range(iters):
            accepted = False
            step_sq = 0.0
            Un = U
            fn = f
            for _ls in range(40):
                Un = _clip_controls(U - alpha * g, phi_max, a_max)
                step_sq = np.sum((Un - U) ** 2)
                if step_sq == 0.0:
                    break
                fn = _objective(Un, s0, goal, Qd, Rd, QTd, obst, dmin, mu, p)
                if fn <= f - 1e-4 / alpha * step_sq:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            U = Un
            decrease = f - fn
            f, g = _objective_grad(U, s0, goal, Qd, Rd, QTd, obst, dmin, mu, p)
            if decrease <= 1e-10 * (1.0 + abs(f)):
                break
            alpha = min(alpha * 2.0, 1e3)
    return U


@njit(cache=True)
def _braking_controls(s0, H, p):
    U = np.zeros((H, 2))
    dt, a_max = p[1], p[3]
    s = s0.copy()
    for k in range(H):
        v = s[3]
        if v > 0:
            U[k, 1] = -min(a_max, v / dt)
        elif v < 0:
            U[k, 1] = min(a_max, -v / dt)
        s, _ = step_arr(s, U[k], p)
    return U


# --- public API ----------------------------------------------------------------


def _obstacles(predictions, H: int) -> np.ndarray:
    if predictions is None:
        return np.zeros((H, 0, 2))
    obst = np.asarray(predictions, dtype=float)
    if obst.size == 0:
        return np.zeros((H, 0, 2))
    if obst.ndim == 2:
        obst = obst[None]
    if obst.shape[1] != H or obst.shape[2] != 2:
        raise ValueError(f"predictions must have shape (M, {H}, 2)")
    # kernels index (k, j, xy)
    return np.ascontiguousarray(obst.transpose(1, 0, 2))


def _margins(q: QuantileVector | None, prob: MpcProblem) -> np.ndarray:
    if q is None:
        return np.full(prob.horizon, prob.safe_distance)
    if q.horizon != prob.horizon:
        raise ValueError("quantile vector length differs from the horizon")
    return prob.safe_distance + q.values


def _kernel_args(prob: MpcProblem):
    return (
        prob.goal.as_array(),
        np.asarray(prob.Q, dtype=float),
        np.asarray(prob.R, dtype=float),
        np.asarray(prob.Q_T, dtype=float),
    )


def evaluate_cost(states, controls, prob: MpcProblem, state0: AgentState | None = None) -> float:
    """Stage costs over ``x_1..x_H`` plus the terminal term at ``x_H``."""
    X = np.asarray(states, dtype=float)
    U = np.asarray(controls, dtype=float)
    if X.ndim != 2 or X.shape[1] != 4 or U.ndim != 2 or U.shape[1] != 2:
        raise ValueError("states must be (H, 4) and controls (H, 2)")
    if X.shape[0] != U.shape[0]:
        raise ValueError("states and controls differ in length")
    goal, Qd, Rd, QTd = _kernel_args(prob)
    padded = np.vstack([np.zeros((1, 4)), X])
    return float(_stage_cost(padded, U, goal, Qd, Rd, QTd))


def objective_and_gradient(controls, state: AgentState, predictions, q, prob: MpcProblem, mu: float):
    """Penalised objective and its gradient w.r.t. the control sequence."""
    U = np.ascontiguousarray(controls, dtype=float)
    goal, Qd, Rd, QTd = _kernel_args(prob)
    return _objective_grad(
        U, state.as_array(), goal, Qd, Rd, QTd,
        _obstacles(predictions, prob.horizon), _margins(q, prob), float(mu),
        prob.dynamics.as_array(),
    )


def constraint_violation(states, predictions, margins) -> float:
    """Largest shortfall of ``|p_k - obstacle_k| >= margins[k]`` (0 when feasible)."""
    X = np.asarray(states, dtype=float)
    obst = _obstacles(predictions, X.shape[0])
    padded = np.vstack([np.zeros((1, 4)), X])
    return float(_shortfall(padded, obst, np.asarray(margins, dtype=float))[1])


def shift_warm_start(controls: np.ndarray) -> np.ndarray:
    return np.vstack([controls[1:], controls[-1:]])


def plan(
    state: AgentState,
    predictions,
    q: QuantileVector | None,
    prob: MpcProblem,
    warm_start: np.ndarray | None = None,
) -> PlanResult:
    """Solve the tightened MPC problem from ``state``.

    ``predictions`` holds the other agents' predicted positions, shape
    ``(M, H, 2)``.  ``warm_start`` is the previous step's control sequence; it
    is shifted by one step here.  Never raises on infeasibility: an unbounded
    threshold or a residual violation above ``prob.fallback_violation`` yields
    a braking sequence with status ``"fallback"``.
    """
    H = prob.horizon
    p = prob.dynamics.as_array()
    s0 = state.as_array()
    obst = _obstacles(predictions, H)
    goal, Qd, Rd, QTd = _kernel_args(prob)

    if q is not None and q.has_infinite:
        return _fallback(s0, obst, np.full(H, prob.safe_distance), prob, p)
    dmin = _margins(q, prob)

    if warm_start is None:
        U0 = np.zeros((H, 2))
    else:
        U0 = shift_warm_start(np.asarray(warm_start, dtype=float))
        if U0.shape != (H, 2):
            raise ValueError("warm start has the wrong shape")
    U = _solve(
        U0, s0, goal, Qd, Rd, QTd, obst, dmin, p,
        np.asarray(prob.penalty_weights, dtype=float), prob.iters_per_level,
    )
    X, _ = _forward(U, s0, p)
    _, worst = _shortfall(X, obst, dmin)
    if worst > prob.fallback_violation:
        return _fallback(s0, obst, dmin, prob, p)
    return PlanResult(U, X[1:], OPTIMAL_APPROX, float(worst), float(_stage_cost(X, U, goal, Qd, Rd, QTd)))


def _fallback(s0, obst, dmin, prob, p) -> PlanResult:
    U = _braking_controls(s0, prob.horizon, p)
    X = rollout_arr(s0, U, p)
    padded = np.vstack([s0[None], X])
    goal, Qd, Rd, QTd = _kernel_args(prob)
    worst = _shortfall(padded, obst, dmin)[1]
    return PlanResult(U, X, FALLBACK, float(worst), float(_stage_cost(padded, U, goal, Qd, Rd, QTd)))
