"""Trajectory predictors for the other agents.

Two variants share one interface: a constant-velocity extrapolator and a
ridge-regularised autoregressive model on joint position deltas.  Both roll
out recursively, feeding each predicted step back into the input window.

Histories and trajectories are position arrays of shape ``(T, n_agents, 2)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

CONSTANT_VELOCITY = "constant_velocity"
AUTOREGRESSIVE = "autoregressive"
MIN_RIDGE = 1e-8


@dataclass(frozen=True)
class PredictorModel:
    kind: str = CONSTANT_VELOCITY
    window: int = 5
    ridge: float = 0.0
    n_agents: int | None = None
    # (window * 2 * n_agents + 1, 2 * n_agents); last row is the intercept
    weights: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in (CONSTANT_VELOCITY, AUTOREGRESSIVE):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.kind == AUTOREGRESSIVE:
            if self.weights is None or self.n_agents is None:
                raise ValueError("autoregressive model needs weights and n_agents")
            dim = 2 * self.n_agents
            w = np.array(self.weights, dtype=float)
            if w.shape != (self.window * dim + 1, dim):
                raise ValueError(f"weight shape {w.shape} inconsistent with window/agents")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def min_history(self) -> int:
        return 2 if self.kind == CONSTANT_VELOCITY else self.window + 1


def constant_velocity() -> PredictorModel:
    return PredictorModel(CONSTANT_VELOCITY)


def _as_positions(traj) -> np.ndarray:
    pos = getattr(traj, "positions", traj)
    pos = np.asarray(pos, dtype=float)
    if pos.ndim != 3 or pos.shape[2] != 2:
        raise ValueError("trajectory must have shape (T, n_agents, 2)")
    return pos


def regression_rows(trajectories: Iterable, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window design matrix (with intercept column) and next-delta targets."""
    X, Y = [], []
    n_agents = None
    for traj in trajectories:
        pos = _as_positions(traj)
        if n_agents is None:
            n_agents = pos.shape[1]
        elif pos.shape[1] != n_agents:
            raise ValueError("all trajectories must have the same agent count")
        d = np.diff(pos, axis=0).reshape(pos.shape[0] - 1, -1)
        for t in range(window - 1, d.shape[0] - 1):
            X.append(d[t - window + 1 : t + 1].ravel())
            Y.append(d[t + 1])
    if not X:
        return np.empty((0, 0)), np.empty((0, 0))
    X = np.hstack([np.array(X), np.ones((len(X), 1))])
    return X, np.array(Y)


def fit(trajectories: Iterable, window: int = 5, ridge: float = 1e-6) -> PredictorModel:
    """Least-squares one-step delta model over every sliding window in the data.

    The ridge term is applied per sample (mean squared error + ridge * |w|^2),
    so duplicating the dataset leaves the fit unchanged.  The intercept is not
    penalised.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("cannot fit a predictor on an empty dataset")
    X, Y = regression_rows(trajectories, window)
    n_agents = _as_positions(trajectories[0]).shape[1]
    n_features = window * 2 * n_agents + 1
    if X.shape[0] < n_features:
        raise ValueError(
            f"dataset yields {X.shape[0]} regression rows, need >= {n_features}"
        )
    lam = max(ridge, MIN_RIDGE)
    n = X.shape[0]
    gram = X.T @ X / n
    reg = np.full(n_features, lam)
    reg[-1] = 0.0
    W = np.linalg.solve(gram + np.diag(reg), X.T @ Y / n)
    return PredictorModel(AUTOREGRESSIVE, window, ridge, n_agents, W)


def pad_history(history: np.ndarray, length: int) -> np.ndarray:
    """Prepend copies of the first observation until ``length`` rows exist."""
    if history.shape[0] >= length:
        return history
    pad = np.repeat(history[:1], length - history.shape[0], axis=0)
    return np.concatenate([pad, history], axis=0)


def predict(model: PredictorModel, history, horizon: int) -> np.ndarray:
    """Predicted positions ``(n_agents, horizon, 2)`` for steps ``t+1..t+horizon``."""
    hist = _as_positions(history)
    n_agents = hist.shape[1]
    if hist.shape[0] < model.min_history:
        raise ValueError(
            f"history of length {hist.shape[0]} shorter than required {model.min_history}"
        )
    out = np.empty((n_agents, horizon, 2))
    if horizon == 0:
        return out
    last = hist[-1]
    if model.kind == CONSTANT_VELOCITY:
        vel = hist[-1] - hist[-2]
        steps = np.arange(1, horizon + 1)[None, :, None]
        return last[:, None, :] + steps * vel[:, None, :]
    if n_agents != model.n_agents:
        raise ValueError("history agent count does not match the model")
    W = model.window
    dim = 2 * n_agents
    deltas = np.diff(hist[-(W + 1) :], axis=0).reshape(W, dim)
    feat = np.empty(W * dim + 1)
    feat[:-1] = deltas.ravel()
    feat[-1] = 1.0
    pos = last.ravel().copy()
    weights = model.weights
    for k in range(horizon):
        nxt = feat @ weights
        pos += nxt
        out[:, k, :] = pos.reshape(n_agents, 2)
        feat[:-dim - 1] = feat[dim:-1]
        feat[-dim - 1 : -1] = nxt
    return out


def training_residual(model: PredictorModel, trajectories: Iterable) -> float:
    """RMS one-step delta error of ``model`` over the dataset's sliding windows."""
    X, Y = regression_rows(trajectories, model.window)
    if X.shape[0] == 0:
        raise ValueError("dataset yields no regression rows")
    return float(np.sqrt(np.mean((X @ model.weights - Y) ** 2)))


def save_model(model: PredictorModel, path) -> None:
    payload = {
        "kind": model.kind,
        "window": model.window,
        "ridge": model.ridge,
        "n_agents": model.n_agents,
        "weights": None if model.weights is None else model.weights.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_model(path) -> PredictorModel:
    with open(path) as fh:
        payload = json.load(fh)
    w = payload.get("weights")
    return PredictorModel(
        payload["kind"],
        int(payload["window"]),
        float(payload["ridge"]),
        payload.get("n_agents"),
        None if w is None else np.array(w, dtype=float),
    )
