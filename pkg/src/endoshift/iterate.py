"""Iterative calibration loops and the one-shot baselines.

``run_icp`` alternates deployment of the tightened planner, collection of a
fresh calibration set, conformal calibration and smoothing until the raw
threshold stops moving.  ``run_iscp`` additionally refits the predictor on a
growing tuning pool each round.  ``run_bcp`` calibrates once on the whole
budget, ``run_ncp`` deploys without tightening.

Episodes come from an *environment* object with two methods::

    collect(q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch
    fit(batches) -> PredictorModel

:class:`SimEnvironment` runs the closed-loop simulator; tests substitute
synthetic score generators.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import predictor as predictor_mod
from .analysis import contraction_estimate
from .conformal import QuantileVector, calibrate, misdetection, quantile_distance, score_episodes, smooth
from .metrics import MetricsReport, compute
from .predictor import PredictorModel, constant_velocity
from .sim import (
    STREAM_BCP,
    STREAM_CAL,
    STREAM_ISCP_TUNE,
    STREAM_TEST,
    PolicySpec,
    SimConfig,
    episode_seed,
    generate_scenario,
    run_episodes,
)


@dataclass(frozen=True)
class IterationConfig:
    epsilon: float = 0.15
    delta: float = 0.01
    gamma: float = 0.8
    phi: float = 0.1
    K: int = 250
    K_tune: int = 250
    max_iterations: int = 12
    horizon: int = 10
    n_agents: int = 2
    cp_agents: tuple = (0,)
    seed: int = 0
    diameter: float = 10.0
    window: int = 5
    ridge: float = 1e-6

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.epsilon < 1 or not 0 < self.delta < 1:
            raise ValueError("epsilon and delta must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if any(not 0 <= a < self.n_agents for a in self.cp_agents):
            raise ValueError("cp_agents must index existing agents")


@dataclass
class Batch:
    scores: dict  # agent -> (n, H) score matrix
    episodes: list | None = None

    def training_view(self) -> "Batch":
        """Copy that keeps only what refitting needs (episode positions)."""
        if self.episodes is None:
            return Batch({}, None)
        return Batch({}, [getattr(ep, "positions", ep) for ep in self.episodes])


@dataclass
class IterationRecord:
    iteration: int
    q: dict  # deployed q^(r) per agent
    q_hat: dict  # raw q_hat^(r+1)
    q_next: dict  # smoothed q^(r+1)
    dq_by_agent: dict
    dq_smoothed_by_agent: dict
    misdetection: dict | None  # agent -> per-step rates of q^(r) on this round
    metrics: MetricsReport | None
    n_episodes: int
    scores: dict = field(repr=False, default_factory=dict)

    @property
    def dq(self) -> float:
        return max(self.dq_by_agent.values())

    @property
    def dq_smoothed(self) -> float:
        return max(self.dq_smoothed_by_agent.values())


@dataclass
class IterationReport:
    method: str
    records: list
    final_q: dict
    converged: bool
    predictor: PredictorModel | None = None
    shift: dict = field(default_factory=dict)  # agent -> ShiftEstimate

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def episodes_used(self) -> int:
        return sum(rec.n_episodes for rec in self.records)


class SimEnvironment:
    """Collects closed-loop episodes with seeded scenarios."""

    def __init__(self, cfg: IterationConfig, sim: SimConfig | None = None, threads: int = 1):
        self.cfg = cfg
        self.sim = sim or SimConfig(horizon=cfg.horizon)
        if self.sim.horizon != cfg.horizon:
            raise ValueError("simulator horizon differs from the iteration horizon")
        self.threads = threads

    def scenarios(self, n: int, stream: int, iteration: int):
        cfg = self.cfg
        return [
            generate_scenario(cfg.n_agents, cfg.diameter, episode_seed(cfg.seed, stream, iteration, i))
            for i in range(n)
        ]

    def policies(self, q_by_agent, predictor, ignore_others=False, cp_agents=None):
        cp = self.cfg.cp_agents if cp_agents is None else cp_agents
        return [
            PolicySpec(
                predictor=predictor,
                q=q_by_agent.get(i) if i in cp else None,
                cp_aware=i in cp,
                ignore_others=ignore_others,
            )
            for i in range(self.cfg.n_agents)
        ]

    def run(self, n, stream, iteration, policies):
        return run_episodes(self.scenarios(n, stream, iteration), policies, self.sim, self.threads)

    def collect(self, q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch:
        logs = self.run(n, stream, iteration, self.policies(q_by_agent, predictor, ignore_others))
        scores = {i: score_episodes(logs, i) for i in self.cfg.cp_agents}
        return Batch(scores, logs)

    def fit(self, batches) -> PredictorModel:
        trajs = [getattr(ep, "positions", ep) for b in batches for ep in b.episodes]
        return predictor_mod.fit(trajs, self.cfg.window, self.cfg.ridge)


def zero_quantiles(cfg: IterationConfig) -> dict:
    return {i: QuantileVector.zeros(cfg.horizon) for i in cfg.cp_agents}


def _round(cfg, env, q, predictor, r, stream=STREAM_CAL, n=None, gamma=None, deployed_cp=True) -> IterationRecord:
    n = cfg.K if n is None else n
    gamma = cfg.gamma if gamma is None else gamma
    batch = env.collect(q, predictor, n, stream, r)
    q_hat = {i: calibrate(batch.scores[i], cfg.epsilon) for i in cfg.cp_agents}
    q_next = {i: smooth(q[i], q_hat[i], gamma) for i in cfg.cp_agents}
    miss = None
    if deployed_cp:
        miss = {i: misdetection(batch.scores[i], q[i])[0] for i in cfg.cp_agents}
    metrics = None
    if batch.episodes:
        metrics = compute(batch.episodes, q if deployed_cp else None)
    return IterationRecord(
        iteration=r,
        q=q,
        q_hat=q_hat,
        q_next=q_next,
        dq_by_agent={i: quantile_distance(q_hat[i], q[i]) for i in cfg.cp_agents},
        dq_smoothed_by_agent={i: quantile_distance(q_next[i], q[i]) for i in cfg.cp_agents},
        misdetection=miss,
        metrics=metrics,
        n_episodes=n,
        scores=batch.scores,
    )


def _iterate(method, cfg, env, predictor, refit) -> IterationReport:
    q = zero_quantiles(cfg)
    records = []
    pool: list = []
    converged = False
    for r in range(cfg.max_iterations):
        if refit and cfg.K_tune > 0:
            # the first tuning round runs agents that ignore each other
            batch = env.collect(q, predictor, cfg.K_tune, STREAM_ISCP_TUNE, r, ignore_others=(r == 0))
            pool.append(batch.training_view())
            predictor = env.fit(pool)
        rec = _round(cfg, env, q, predictor, r, deployed_cp=r > 0)
        records.append(rec)
        q = rec.q_next
        if rec.dq <= cfg.phi:
            converged = True
            break
    report = IterationReport(method, records, q, converged, predictor)
    report.shift = shift_estimates(report, cfg)
    return report


def run_icp(cfg: IterationConfig, predictor: PredictorModel, env=None) -> IterationReport:
    """Iterative calibration with a fixed predictor, stopping once ``dq <= phi``."""
    env = env or SimEnvironment(cfg)
    return _iterate("icp", cfg, env, predictor, refit=False)


def run_iscp(cfg: IterationConfig, predictor: PredictorModel | None = None, env=None) -> IterationReport:
    """Like :func:`run_icp`, refitting the predictor on all tuning episodes so far."""
    env = env or SimEnvironment(cfg)
    return _iterate("iscp", cfg, env, predictor or constant_velocity(), refit=True)


def run_bcp(cfg: IterationConfig, predictor: PredictorModel, n_episodes: int | None = None, env=None) -> IterationReport:
    """Single calibration round on the full budget (default ``4 K``), deployed as-is."""
    env = env or SimEnvironment(cfg)
    n = 4 * cfg.K if n_episodes is None else n_episodes
    rec = _round(cfg, env, zero_quantiles(cfg), predictor, 0, stream=STREAM_BCP, n=n, gamma=1.0, deployed_cp=False)
    return IterationReport("bcp", [rec], rec.q_hat, True, predictor)


def run_ncp(cfg: IterationConfig, predictor: PredictorModel, n_test: int, test_seed: int | None = None, env=None):
    """Evaluate the untightened planner; no agent is CP-aware, no misdetection."""
    env = env or SimEnvironment(cfg)
    return evaluate_policy(env, {}, predictor, n_test, test_seed, cp_agents=())


def evaluate_policy(env: SimEnvironment, q_by_agent: dict, predictor, n_test: int, test_seed: int | None = None,
                    cp_agents=None):
    """Run ``n_test`` seeded test episodes; the same seed gives the same scenarios."""
    cfg = env.cfg
    cp = cfg.cp_agents if cp_agents is None else tuple(cp_agents)
    seed = cfg.seed if test_seed is None else test_seed
    scenarios = [
        generate_scenario(cfg.n_agents, cfg.diameter, episode_seed(seed, STREAM_TEST, 0, i))
        for i in range(n_test)
    ]
    logs = run_episodes(scenarios, env.policies(q_by_agent, predictor, cp_agents=cp), env.sim, env.threads)
    q_eval = {i: q_by_agent[i] for i in cp if i in q_by_agent}
    return compute(logs, q_eval or None, env.sim.timeout_s), logs


def shift_estimates(report: IterationReport, cfg: IterationConfig) -> dict:
    if len(report.records) < 3:
        return {}
    out = {}
    for i in cfg.cp_agents:
        sets = [rec.scores[i] for rec in report.records]
        q_hats = [rec.q_hat[i] for rec in report.records]
        out[i] = contraction_estimate(sets, q_hats=q_hats)
    return out


# --- CSV output -----------------------------------------------------------------

ITERATION_COLUMNS = [
    "iteration", "collision_pct", "deviation_ego_m", "deviation_other_m", "misdetection_pct",
    "avg_nav_time_s", "success_pct", "dq", "dq_smoothed", "n_episodes",
]


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def write_iterations_csv(path, report: IterationReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ITERATION_COLUMNS)
        w.writeheader()
        for rec in report.records:
            row = dict.fromkeys(ITERATION_COLUMNS, "")
            row.update(iteration=rec.iteration, dq=_fmt(rec.dq), dq_smoothed=_fmt(rec.dq_smoothed),
                       n_episodes=rec.n_episodes)
            if rec.metrics is not None:
                tr = rec.metrics.table_row(report.method)
                for col in ITERATION_COLUMNS[1:7]:
                    row[col] = tr[col]
            if rec.misdetection is not None:
                row["misdetection_pct"] = _fmt(100 * np.mean([m.mean() for m in rec.misdetection.values()]))
            w.writerow(row)


def write_misdetection_csv(path, report: IterationReport) -> None:
    """Per-step misdetection (percent) of each deployed threshold on its own round."""
    H = len(next(iter(report.final_q.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "agent", "all_steps", *[f"step{k}" for k in range(1, H + 1)]])
        for rec in report.records:
            if rec.misdetection is None:
                continue
            for agent, rates in sorted(rec.misdetection.items()):
                w.writerow([rec.iteration, agent, _fmt(100 * rates.mean()), *[_fmt(100 * x) for x in rates]])


def write_quantiles_over_horizon_csv(path, report: IterationReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "agent", "k", "q", "q_hat", "q_next"])
        for rec in report.records:
            for agent in sorted(rec.q):
                for k in range(rec.q[agent].horizon):
                    w.writerow([rec.iteration, agent, k + 1, _fmt(rec.q[agent].values[k]),
                                _fmt(rec.q_hat[agent].values[k]), _fmt(rec.q_next[agent].values[k])])


def stopping_iteration(report: IterationReport) -> int | None:
    """Index of the round whose ``dq`` met the stopping rule, if any."""
    return report.records[-1].iteration if report.converged else None


def dq_sequence(report: IterationReport) -> list[float]:
    return [rec.dq for rec in report.records]
