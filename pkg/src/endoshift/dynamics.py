"""Kinematic bicycle model shared by the simulator and the planner.

States are ``(x, y, theta, v)`` and controls ``(phi, a)``.  The public
functions work on small frozen dataclasses; the ``*_arr`` kernels operate on
plain float arrays and are compiled with numba so the MPC solver can call them
in its inner loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

# Slack for control-bound checks; planners return projected controls that can
# sit a few ulps outside the box after float arithmetic.
_BOUND_TOL = 1e-9


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.theta, self.v)):
            raise ValueError(f"non-finite state {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "AgentState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Control:
    phi: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.a], dtype=float)


@dataclass(frozen=True)
class DynamicsParams:
    l: float = 1.0
    dt: float = 0.1
    phi_max: float = 0.6
    a_max: float = 2.0
    v_max: float = 3.0
    v_min: float = -1.0

    def __post_init__(self):
        if self.l <= 0:
            raise ValueError("wheelbase l must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.phi_max < math.pi / 2:
            raise ValueError("phi_max must lie in (0, pi/2)")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if self.v_min > self.v_max:
            raise ValueError("v_min exceeds v_max")

    def as_array(self) -> np.ndarray:
        """Packed ``[l, dt, phi_max, a_max, v_max, v_min]`` for the kernels."""
        return np.array(
            [self.l, self.dt, self.phi_max, self.a_max, self.v_max, self.v_min]
        )


@njit(cache=True)
def step_arr(s, u, p):
    """One bicycle-model update.  Returns ``(next_state, speed_clamped)``."""
    l, dt, v_max, v_min = p[0], p[1], p[4], p[5]
    x, y, th, v = s[0], s[1], s[2], s[3]
    out = np.empty(4)
    out[0] = x + dt * v * math.cos(th)
    out[1] = y + dt * v * math.sin(th)
    out[2] = th + dt * v / l * math.tan(u[0])
    vn = v + dt * u[1]
    clamped = False
    if vn > v_max:
        vn = v_max
        clamped = True
    elif vn < v_min:
        vn = v_min
        clamped = True
    out[3] = vn
    return out, clamped


@njit(cache=True)
def rollout_arr(s0, controls, p):
    """States ``x_1..x_H`` reached from ``s0`` under ``controls`` (shape ``(H, 2)``)."""
    H = controls.shape[0]
    states = np.empty((H, 4))
    s = s0.copy()
    for k in range(H):
        s, _ = step_arr(s, controls[k], p)
        states[k] = s
    return states


def clamp_control(u: Control, p: DynamicsParams) -> Control:
    return Control(
        min(max(u.phi, -p.phi_max), p.phi_max), min(max(u.a, -p.a_max), p.a_max)
    )


def _check_control(u: Control, p: DynamicsParams) -> None:
    if not (math.isfinite(u.phi) and math.isfinite(u.a)):
        raise ValueError(f"non-finite control {u!r}")
    if abs(u.phi) > p.phi_max + _BOUND_TOL or abs(u.a) > p.a_max + _BOUND_TOL:
        raise ValueError(f"control {u!r} outside bounds")


def step_with_info(s: AgentState, u: Control, p: DynamicsParams) -> tuple[AgentState, bool]:
    """Like :func:`step` but also reports whether the speed was clamped."""
    _check_control(u, p)
    out, clamped = step_arr(s.as_array(), u.as_array(), p.as_array())
    return AgentState.from_array(out), bool(clamped)


def step(s: AgentState, u: Control, p: DynamicsParams) -> AgentState:
    return step_with_info(s, u, p)[0]


def rollout(s0: AgentState, controls: Sequence[Control], p: DynamicsParams) -> list[AgentState]:
    if len(controls) < 1:
        raise ValueError("rollout needs at least one control")
    for u in controls:
        _check_control(u, p)
    U = np.array([u.as_array() for u in controls])
    states = rollout_arr(s0.as_array(), U, p.as_array())
    return [AgentState.from_array(row) for row in states]
