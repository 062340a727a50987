"""Evaluation metrics over a set of test episodes (all rates in percent)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .conformal import QuantileVector, misdetection, score_episode
from .sim import EpisodeLog

EGO = 0

TABLE_COLUMNS = [
    "method",
    "collision_pct",
    "deviation_ego_m",
    "deviation_other_m",
    "misdetection_pct",
    "avg_nav_time_s",
    "success_pct",
]


@dataclass
class MetricsReport:
    n_episodes: int
    collision_rate: float
    success_rate: float
    avg_nav_time: float | None
    deviation_ego: float
    deviation_other: float | None
    misdetection_rate: float | None = None
    misdetection_per_step: list | None = None

    def table_row(self, method: str) -> dict:
        def fmt(x):
            return "" if x is None else repr(float(x))

        return {
            "method": method,
            "collision_pct": fmt(self.collision_rate),
            "deviation_ego_m": fmt(self.deviation_ego),
            "deviation_other_m": fmt(self.deviation_other),
            "misdetection_pct": fmt(self.misdetection_rate),
            "avg_nav_time_s": fmt(self.avg_nav_time),
            "success_pct": fmt(self.success_rate),
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to the segment ``a -> b``."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.linalg.norm(points - a, axis=-1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + s[:, None] * ab), axis=-1)


def path_deviation(log: EpisodeLog, agent: int) -> float:
    """Mean distance of the agent's positions from its straight start-to-goal path."""
    pos = log.positions[:, agent]
    return float(segment_distance(pos, pos[0], log.goals[agent]).mean())


def ego_succeeded(log: EpisodeLog) -> bool:
    return not log.collided and log.goal_steps[EGO] is not None


def compute(
    episodes: Sequence[EpisodeLog],
    q_by_agent: Mapping[int, QuantileVector] | None = None,
    timeout_s: float = 30.0,
) -> MetricsReport:
    """Collision, success, navigation time, path deviation and misdetection.

    Misdetection is only reported when ``q_by_agent`` names at least one agent;
    rows of every listed agent are pooled.  Navigation time averages over
    CP-aware agents in successful episodes (the ego when no agent is CP-aware).
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    n = len(episodes)
    collided = np.array([ep.collided for ep in episodes])
    success = np.array(
        [ego_succeeded(ep) and ep.goal_steps[EGO] * ep.dt <= timeout_s for ep in episodes]
    )

    nav = []
    for ep, ok in zip(episodes, success):
        if not ok:
            continue
        agents = [i for i, aware in enumerate(ep.cp_aware) if aware] or [EGO]
        nav.extend(ep.goal_steps[i] * ep.dt for i in agents if ep.goal_steps[i] is not None)

    dev_ego = float(np.mean([path_deviation(ep, EGO) for ep in episodes]))
    n_agents = episodes[0].states.shape[1]
    dev_other = None
    if n_agents > 1:
        dev_other = float(
            np.mean([np.mean([path_deviation(ep, j) for j in range(1, n_agents)]) for ep in episodes])
        )

    report = MetricsReport(
        n_episodes=n,
        collision_rate=100.0 * collided.mean(),
        success_rate=100.0 * success.mean(),
        avg_nav_time=float(np.mean(nav)) if nav else None,
        deviation_ego=dev_ego,
        deviation_other=dev_other,
    )
    if q_by_agent:
        misses = []
        for agent, q in sorted(q_by_agent.items()):
            scores = np.array([score_episode(ep, agent) for ep in episodes])
            per_step, _ = misdetection(scores, q)
            misses.append(per_step)
        per_step = np.mean(misses, axis=0)
        report.misdetection_per_step = (100.0 * per_step).tolist()
        report.misdetection_rate = float(100.0 * per_step.mean())
    return report


def write_table_csv(path, rows: Sequence[tuple[str, MetricsReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for method, rep in rows:
            w.writerow(rep.table_row(method))
