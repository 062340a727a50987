"""Synthetic score environments that stand in for the simulator.

They implement the ``collect``/``fit`` protocol of :mod:`endoshift.iterate`
and return score matrices directly, so calibration logic can be checked
against known distributions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .iterate import Batch


def _rng(seed, stream, iteration):
    return np.random.default_rng(np.random.SeedSequence([seed, stream, iteration]))


def _q_level(q_by_agent, agent) -> float:
    q = q_by_agent.get(agent)
    if q is None:
        return 0.0
    vals = np.asarray(q.values, dtype=float)
    return float(np.mean(np.where(np.isfinite(vals), vals, 0.0)))


@dataclass
class StationaryEnv:
    """Scores i.i.d. ``scale * |N(0,1)| * (1 + slope k)``, independent of the deployed q.

    The default scale gives per-step threshold noise close to what the live
    two-agent campaign shows once converged; the raw ``dq`` of any i.i.d.
    source never drops below roughly ``sqrt(H)`` times that noise.
    """

    horizon: int = 10
    agents: tuple = (0,)
    scale: float = 0.1
    slope: float = 0.1
    seed: int = 0
    calls: list = field(default_factory=list)

    def sample(self, n, rng):
        growth = 1.0 + self.slope * np.arange(self.horizon)
        return self.scale * np.abs(rng.standard_normal((n, self.horizon))) * growth

    def collect(self, q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch:
        self.calls.append((stream, iteration, n))
        rng = _rng(self.seed, stream, iteration)
        return Batch({i: self.sample(n, rng) for i in self.agents}, [])

    def fit(self, batches):
        return None


@dataclass
class ScriptedEnv:
    """Deterministic scores: ``base[k] + coupling * mean(q) + jitter``.

    ``jitter`` is a fixed per-call table so results are reproducible and
    easy to recompute by hand in tests.
    """

    horizon: int = 5
    agents: tuple = (0,)
    coupling: float = 0.5
    seed: int = 0
    base: np.ndarray | None = None
    history: list = field(default_factory=list)

    def scores_for(self, q_by_agent, n, stream, iteration):
        base = np.linspace(0.5, 1.5, self.horizon) if self.base is None else np.asarray(self.base, float)
        rng = _rng(self.seed, stream, iteration)
        out = {}
        for i in self.agents:
            jitter = rng.uniform(0.0, 1.0, (n, self.horizon))
            out[i] = base + self.coupling * _q_level(q_by_agent, i) + jitter
        return out

    def collect(self, q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch:
        scores = self.scores_for(q_by_agent, n, stream, iteration)
        self.history.append((dict(q_by_agent), stream, iteration, scores))
        return Batch(scores, [])

    def fit(self, batches):
        return None


@dataclass
class GeometricShiftEnv:
    """Score sets whose consecutive-round W1 shrinks by exactly ``delta``.

    Round ``r`` returns ``Z + shift0 * delta**r`` for one fixed noise draw
    ``Z`` (common random numbers); with ``fresh_noise`` every round draws a
    new ``Z`` and the ratio is only recovered statistically.
    """

    delta: float = 0.6
    n: int = 500
    horizon: int = 5
    shift0: float = 4.0
    seed: int = 0
    fresh_noise: bool = False

    def round_scores(self, r: int) -> np.ndarray:
        rng = _rng(self.seed, 0, r if self.fresh_noise else 0)
        z = np.abs(rng.standard_normal((self.n, self.horizon)))
        return z + self.shift0 * self.delta**r

    def rounds(self, n_rounds: int) -> list:
        return [self.round_scores(r) for r in range(n_rounds)]

    def collect(self, q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch:
        return Batch({0: self.round_scores(iteration)[:n]}, [])

    def fit(self, batches):
        return None


@dataclass(frozen=True)
class StubPredictor:
    """Stands in for a refitted model; only its error scale matters."""

    error_scale: float


@dataclass
class ImprovingPredictorEnv:
    """Prediction error shrinks as the tuning pool grows.

    ``fit`` returns a :class:`StubPredictor` whose error scale is
    ``floor + (start - floor) / (1 + n_batches / half_life)``; calibration
    scores are that scale times |N(0,1)| plus a small response to q.
    """

    horizon: int = 5
    agents: tuple = (0,)
    start: float = 2.0
    floor: float = 0.2
    half_life: float = 1.0
    coupling: float = 0.1
    seed: int = 0
    fits: list = field(default_factory=list)

    def collect(self, q_by_agent, predictor, n, stream, iteration, ignore_others=False) -> Batch:
        scale = getattr(predictor, "error_scale", self.start)
        rng = _rng(self.seed, stream, iteration)
        scores = {
            i: scale * np.abs(rng.standard_normal((n, self.horizon))) + self.coupling * _q_level(q_by_agent, i)
            for i in self.agents
        }
        return Batch(scores, [])

    def fit(self, batches):
        scale = self.floor + (self.start - self.floor) / (1.0 + len(batches) / self.half_life)
        model = StubPredictor(scale)
        self.fits.append(model)
        return model
