"""Scenario generation and closed-loop multi-agent episodes."""
from __future__ import annotations

import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .conformal import QuantileVector
from .dynamics import AgentState, DynamicsParams, step_arr
from .mpc import MpcProblem, plan
from .predictor import PredictorModel, constant_velocity, pad_history, predict

# seed streams; calibration uses the same stream for ICP and ISCP so that a
# zero tuning budget reproduces ICP exactly
STREAM_TUNE = 1
STREAM_CAL = 2
STREAM_TEST = 3
STREAM_BCP = 4
STREAM_ISCP_TUNE = 5


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 10
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    safe_distance: float = 0.5
    collision_radius: float = 0.3
    goal_radius: float = 0.3
    timeout_s: float = 30.0
    iters_per_level: int = 60

    @property
    def max_steps(self) -> int:
        return int(round(self.timeout_s / self.dynamics.dt))


@dataclass(frozen=True)
class Scenario:
    starts: tuple  # of AgentState
    goals: np.ndarray  # (n_agents, 2)
    diameter: float = 10.0
    seed: int | None = None

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def fingerprint(self) -> str:
        """Stable text key; equal scenarios give equal fingerprints."""
        parts = [repr(tuple(s.as_array().tolist())) for s in self.starts]
        parts.append(repr(np.asarray(self.goals).tolist()))
        return "|".join(parts)


@dataclass(frozen=True)
class PolicySpec:
    """One agent's planner: MPC tightened by ``q`` using ``predictor`` forecasts.

    ``q=None`` plans with zero tightening.  ``cp_aware`` marks agents whose
    thresholds are calibrated and whose metrics count as CP agents.
    ``ignore_others`` drops all collision constraints.
    """

    predictor: PredictorModel = field(default_factory=constant_velocity)
    q: QuantileVector | None = None
    cp_aware: bool = False
    ignore_others: bool = False


@dataclass
class EpisodeLog:
    states: np.ndarray  # (T+1, n, 4)
    predictions: np.ndarray  # (T, n_observer, n, H, 2)
    goals: np.ndarray  # (n, 2)
    collision_step: int | None
    goal_steps: list  # first step each agent is inside goal_radius, or None
    timeout: bool
    cp_aware: tuple
    dt: float
    fallbacks: list = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :, :2]

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def collided(self) -> bool:
        return self.collision_step is not None


@dataclass(frozen=True)
class Events:
    collision_step: int | None
    goal_steps: tuple
    timeout: bool


def episode_seed(root: int, stream: int, iteration: int, index: int) -> int:
    ss = np.random.SeedSequence([root, stream, iteration, index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def generate_scenario(
    n_agents: int,
    diameter: float,
    seed: int,
    min_separation: float = 2.0,
    jitter: float = 0.35,
    max_tries: int = 1000,
) -> Scenario:
    """Starts on the circle, goals roughly diametrically opposite.

    Resamples until every pair of starts, and every pair of goals, is at least
    ``min_separation`` apart.
    """
    if n_agents < 2:
        raise ValueError("need at least two agents")
    rng = np.random.default_rng(seed)
    radius = diameter / 2
    for _ in range(max_tries):
        ang = rng.uniform(0, 2 * math.pi, n_agents)
        goal_ang = ang + math.pi + rng.uniform(-jitter, jitter, n_agents)
        starts = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        goals = radius * np.stack([np.cos(goal_ang), np.sin(goal_ang)], axis=1)
        if _min_pair_distance(starts) >= min_separation and _min_pair_distance(goals) >= min_separation:
            break
    else:
        raise RuntimeError(f"no valid scenario after {max_tries} draws (seed={seed})")
    heading = np.arctan2(goals[:, 1] - starts[:, 1], goals[:, 0] - starts[:, 0])
    agents = tuple(
        AgentState(float(starts[i, 0]), float(starts[i, 1]), float(heading[i]), 0.0)
        for i in range(n_agents)
    )
    return Scenario(agents, goals, diameter, seed)


def _min_pair_distance(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(points.shape[0], 1)
    return float(d[iu].min())


def _first_collision(positions: np.ndarray, radius: float) -> int | None:
    """First step index at which any pair is closer than ``radius``."""
    n = positions.shape[1]
    diff = positions[:, :, None, :] - positions[:, None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    d[:, np.arange(n), np.arange(n)] = np.inf
    hit = np.flatnonzero((d < radius).any(axis=(1, 2)))
    return int(hit[0]) if hit.size else None


def _problem_for(scenario: Scenario, i: int, cfg: SimConfig) -> MpcProblem:
    s, g = scenario.starts[i], scenario.goals[i]
    heading = math.atan2(g[1] - s.y, g[0] - s.x)
    return MpcProblem(
        goal=AgentState(float(g[0]), float(g[1]), heading, 0.0),
        horizon=cfg.horizon,
        safe_distance=cfg.safe_distance,
        dynamics=cfg.dynamics,
        iters_per_level=cfg.iters_per_level,
    )


def run_episode(scenario: Scenario, policies: Sequence[PolicySpec], cfg: SimConfig = SimConfig()) -> EpisodeLog:
    """Closed-loop rollout until every agent reached its goal, a collision, or timeout.

    All agents plan against the same history up to ``t`` and then move
    together.  Each agent's predictions of everybody at every step are kept so
    the episode can be scored afterwards.
    """
    n = scenario.n_agents
    if len(policies) != n:
        raise ValueError("need one policy per agent")
    H, T_max = cfg.horizon, cfg.max_steps
    p = cfg.dynamics.as_array()
    problems = [_problem_for(scenario, i, cfg) for i in range(n)]
    goals = np.asarray(scenario.goals, dtype=float)

    states = np.empty((T_max + 1, n, 4))
    states[0] = [s.as_array() for s in scenario.starts]
    preds = np.empty((T_max, n, n, H, 2))
    goal_steps: list = [None] * n
    fallbacks = [0] * n
    warm: list = [None] * n
    others = [[j for j in range(n) if j != i] for i in range(n)]

    def check(t):
        pos = states[t, :, :2]
        for i in range(n):
            if goal_steps[i] is None and np.linalg.norm(pos[i] - goals[i]) <= cfg.goal_radius:
                goal_steps[i] = t
        return _first_collision(pos[None], cfg.collision_radius) is not None

    collision_step = 0 if check(0) else None
    t = 0
    while collision_step is None and t < T_max and any(g is None for g in goal_steps):
        hist = states[: t + 1, :, :2]
        cache: dict[int, np.ndarray] = {}
        controls = np.empty((n, 2))
        for i, pol in enumerate(policies):
            key = id(pol.predictor)
            if key not in cache:
                padded = pad_history(hist, pol.predictor.min_history)
                cache[key] = predict(pol.predictor, padded, H)
            pred = cache[key]
            preds[t, i] = pred
            obstacles = None if pol.ignore_others else pred[others[i]]
            res = plan(AgentState.from_array(states[t, i]), obstacles, pol.q, problems[i], warm[i])
            warm[i] = res.controls
            fallbacks[i] += res.status != "optimal-approx"
            controls[i] = res.controls[0]
        for i in range(n):
            states[t + 1, i], _ = step_arr(states[t, i], controls[i], p)
        t += 1
        if check(t):
            collision_step = t

    all_goals = all(g is not None for g in goal_steps)
    return EpisodeLog(
        states=states[: t + 1].copy(),
        predictions=preds[:t].copy(),
        goals=goals,
        collision_step=collision_step,
        goal_steps=goal_steps,
        timeout=collision_step is None and not all_goals,
        cp_aware=tuple(pol.cp_aware for pol in policies),
        dt=cfg.dynamics.dt,
        fallbacks=fallbacks,
    )


def detect_events(log: EpisodeLog, cfg: SimConfig = SimConfig()) -> Events:
    """Recompute collision, goal and timeout events from the raw states."""
    pos = log.positions
    collision = _first_collision(pos, cfg.collision_radius)
    steps = []
    for i in range(pos.shape[1]):
        inside = np.flatnonzero(np.linalg.norm(pos[:, i] - log.goals[i], axis=-1) <= cfg.goal_radius)
        steps.append(int(inside[0]) if inside.size else None)
    timeout = collision is None and any(s is None for s in steps)
    return Events(collision, tuple(steps), timeout)


def _run_one(seed_scenario, policies, cfg):
    return run_episode(seed_scenario, policies, cfg)


def run_episodes(
    scenarios: Sequence[Scenario],
    policies: Sequence[PolicySpec],
    cfg: SimConfig = SimConfig(),
    threads: int = 1,
) -> list[EpisodeLog]:
    """Run independent episodes, optionally on a process pool; order is preserved."""
    if threads <= 1 or len(scenarios) < 2:
        return [run_episode(s, policies, cfg) for s in scenarios]
    ctx = multiprocessing.get_context("fork")
    job = partial(_run_one, policies=policies, cfg=cfg)
    chunk = max(1, len(scenarios) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
        return list(pool.map(job, scenarios, chunksize=chunk))


# --- line-delimited episode records -------------------------------------------


def write_episode_log(log: EpisodeLog, path) -> None:
    """One JSON record per line: a header, then one record per step."""
    with open(path, "w") as fh:
        header = {
            "type": "header",
            "goals": log.goals.tolist(),
            "cp_aware": list(log.cp_aware),
            "dt": log.dt,
            "horizon": int(log.predictions.shape[3]) if log.predictions.ndim == 5 else 0,
            "fallbacks": list(log.fallbacks),
        }
        fh.write(json.dumps(header) + "\n")
        for t in range(log.states.shape[0]):
            rec = {"type": "step", "t": t, "states": log.states[t].tolist()}
            if t < log.predictions.shape[0]:
                rec["predictions"] = log.predictions[t].tolist()
            fh.write(json.dumps(rec) + "\n")
        events = {
            "type": "events",
            "collision_step": log.collision_step,
            "goal_steps": list(log.goal_steps),
            "timeout": log.timeout,
        }
        fh.write(json.dumps(events) + "\n")


def read_episode_log(path) -> EpisodeLog:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    header, events = records[0], records[-1]
    steps = [r for r in records if r["type"] == "step"]
    states = np.array([r["states"] for r in steps], dtype=float)
    n, H = states.shape[1], header["horizon"]
    pred_rows = [r["predictions"] for r in steps if "predictions" in r]
    preds = np.array(pred_rows, dtype=float) if pred_rows else np.empty((0, n, n, H, 2))
    return EpisodeLog(
        states=states,
        predictions=preds,
        goals=np.array(header["goals"], dtype=float),
        collision_step=events["collision_step"],
        goal_steps=list(events["goal_steps"]),
        timeout=events["timeout"],
        cp_aware=tuple(header["cp_aware"]),
        dt=header["dt"],
        fallbacks=list(header.get("fallbacks", [])),
    )
