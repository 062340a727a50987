"""Nonconformity scores, per-horizon conformal quantiles and the smoothing filter.

A score matrix is a plain ``(K, H)`` float array: row ``i`` holds, for every
horizon step, the worst prediction error seen along calibration episode ``i``.
Thresholds are carried in :class:`QuantileVector`, which may hold ``inf`` when
the calibration set is too small for the requested level.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .sim import EpisodeLog

# Guards ceil/floor of (K+1)(1-eps) against float noise, e.g. 20 * 0.9.
_INDEX_SLACK = 1e-9


@dataclass(frozen=True)
class CpConfig:
    epsilon: float = 0.15
    delta: float = 0.01
    gamma: float = 0.8
    phi: float = 0.1

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.phi < 0:
            raise ValueError("phi must be non-negative")


@dataclass(frozen=True)
class QuantileVector:
    """Per-horizon thresholds ``q[0..H-1]`` (metres); ``inf`` marks "no finite quantile"."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1:
            raise ValueError("quantile vector must be 1-D")
        if np.any(np.isnan(v)) or np.any(v < 0):
            raise ValueError("quantiles must be non-negative numbers")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, horizon: int) -> "QuantileVector":
        return cls(np.zeros(horizon))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def infinite(self) -> np.ndarray:
        return np.isinf(self.values)

    @property
    def has_infinite(self) -> bool:
        return bool(np.any(self.infinite))

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.values == 0))

    def __len__(self):
        return self.horizon

    def __eq__(self, other):
        if not isinstance(other, QuantileVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


def as_score_matrix(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2 or s.shape[0] < 1:
        raise ValueError("score matrix must be (K, H) with K >= 1")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ValueError("scores must be finite and non-negative")
    return s


def order_index(K: int, epsilon: float) -> int:
    """1-based rank ``ceil((K+1)(1-eps))`` of the conformal order statistic."""
    return math.ceil((K + 1) * (1 - epsilon) - _INDEX_SLACK)


def calibrate(scores, epsilon: float) -> QuantileVector:
    s = as_score_matrix(scores)
    K = s.shape[0]
    p = order_index(K, epsilon)
    if p > K:
        return QuantileVector(np.full(s.shape[1], np.inf))
    return QuantileVector(np.sort(s, axis=0)[p - 1])


def smooth(q_prev: QuantileVector, q_hat: QuantileVector, gamma: float) -> QuantileVector:
    """Convex update ``(1 - gamma) q_prev + gamma q_hat``."""
    if q_prev.horizon != q_hat.horizon:
        raise ValueError("quantile vectors differ in length")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    if gamma == 0:
        return q_prev
    if gamma == 1:
        return q_hat
    # both coefficients are positive here, so inf propagates without nan
    return QuantileVector((1 - gamma) * q_prev.values + gamma * q_hat.values)


def quantile_distance(a: QuantileVector, b: QuantileVector) -> float:
    """Euclidean gap between two threshold vectors; ``inf`` if either is unbounded."""
    if a.has_infinite or b.has_infinite:
        return math.inf
    return float(np.linalg.norm(a.values - b.values))


def misdetection(test_scores, q: QuantileVector) -> tuple[np.ndarray, float]:
    """Fraction of rows exceeding ``q`` per horizon step, and over all cells."""
    s = as_score_matrix(test_scores)
    if s.shape[1] != q.horizon:
        raise ValueError("score width does not match quantile horizon")
    miss = s > q.values[None, :]
    return miss.mean(axis=0), float(miss.mean())


def score_episode(log: "EpisodeLog", observer: int) -> np.ndarray:
    """Worst position error of ``observer``'s predictions, per horizon step.

    ``row[k-1]`` is the max over issue times ``t`` and over every other agent
    of ``|Y[t+k] - Yhat[t+k | t]|``.  Horizon steps that never resolve inside
    the episode contribute 0.
    """
    Y = log.positions
    P = log.predictions
    T = Y.shape[0] - 1
    n_issued, H = P.shape[0], P.shape[3]
    if T < 1 or n_issued < 1:
        raise ValueError("episode too short to score")
    others = [j for j in range(Y.shape[1]) if j != observer]
    row = np.zeros(H)
    for k in range(1, H + 1):
        t_end = min(n_issued, T - k + 1)
        if t_end <= 0:
            continue
        truth = Y[k : k + t_end][:, others]
        pred = P[:t_end, observer, others, k - 1]
        row[k - 1] = np.linalg.norm(truth - pred, axis=-1).max()
    return row


def score_episodes(logs, observer: int) -> np.ndarray:
    return np.array([score_episode(log, observer) for log in logs])


# --- dataset-conditional coverage bound -------------------------------------


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 20000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)``, the CDF of Beta(a, b) at ``x``."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1) / (a + b + 2):
        return math.exp(log_front) * _beta_continued_fraction(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_continued_fraction(b, a, 1 - x) / b


def beta_quantile(a: float, b: float, prob: float, tol: float = 1e-12) -> float:
    """Inverse Beta(a, b) CDF by bisection.

    Stops once the bracket is below ``tol`` relative to its position, so
    quantiles close to 0 (steep CDF for ``a < 1``) are also resolved.
    """
    if not 0 <= prob <= 1:
        raise ValueError("prob must lie in [0, 1]")
    lo, hi = 0.0, 1.0
    for _ in range(2000):
        if hi - lo <= tol * max(lo, 1e-300):
            break
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def coverage_lower_bound(K: int, epsilon: float, delta: float) -> float:
    """Coverage that holds with probability ``1 - delta`` over the calibration draw."""
    if K < 1:
        raise ValueError("K must be positive")
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise ValueError("epsilon and delta must lie in (0, 1)")
    v = math.floor((K + 1) * epsilon + _INDEX_SLACK)
    if v < 1:
        return 1.0
    return beta_quantile(K + 1 - v, v, delta)


# --- CSV round-trips ---------------------------------------------------------


def write_scores_csv(path, scores) -> None:
    s = as_score_matrix(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{k}" for k in range(1, s.shape[1] + 1)])
        for row in s:
            w.writerow([repr(float(x)) for x in row])


def read_scores_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return as_score_matrix([[float(x) for x in r] for r in rows[1:]])


def write_quantiles_csv(path, q: QuantileVector) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "q"])
        for k, val in enumerate(q.values, start=1):
            w.writerow([k, repr(float(val))])


def read_quantiles_csv(path) -> QuantileVector:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return QuantileVector(np.array([float(r["q"]) for r in rows]))
