"""Empirical shift diagnostics between calibration rounds.

Distances are 1-Wasserstein between empirical distributions: exact in one
dimension, and a random-projection (sliced) average for whole trajectories.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conformal import QuantileVector, calibrate

RATIO_FLOOR = 1e-9


def w1_1d(a, b) -> float:
    """Exact W1 between two empirical 1-D samples."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("w1_1d needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # integrate |F_a - F_b| over the merged support
    grid = np.sort(np.concatenate([a, b]))
    widths = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def flatten_trajectories(trajs: Sequence, length: int) -> np.ndarray:
    """Stack trajectories as vectors of ``length`` steps, holding the final state."""
    rows = []
    for tr in trajs:
        arr = np.asarray(getattr(tr, "positions", tr), dtype=float)
        if arr.shape[0] >= length:
            arr = arr[:length]
        else:
            pad = np.repeat(arr[-1:], length - arr.shape[0], axis=0)
            arr = np.concatenate([arr, pad], axis=0)
        rows.append(arr.ravel())
    return np.array(rows)


def sliced_w1(A: Sequence, B: Sequence, n_proj: int = 64, seed: int = 0, length: int | None = None) -> float:
    """Mean 1-D W1 of the two trajectory sets over random unit projections.

    Trajectories are brought to a common ``length`` (default: the longest one
    in either set) by truncation or by repeating their last state.
    """
    if len(A) == 0 or len(B) == 0:
        raise ValueError("sliced_w1 needs non-empty trajectory sets")
    if length is None:
        length = max(np.asarray(getattr(t, "positions", t)).shape[0] for t in [*A, *B])
    FA = flatten_trajectories(A, length)
    FB = flatten_trajectories(B, length)
    if FA.shape[1] != FB.shape[1]:
        raise ValueError("trajectory sets differ in state dimension")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_proj, FA.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = FA @ dirs.T, FB @ dirs.T
    return float(np.mean([w1_1d(pa[:, k], pb[:, k]) for k in range(n_proj)]))


@dataclass
class ShiftEstimate:
    """Consecutive-round score shifts.

    ``w1_per_step[r]`` / ``w1_pooled[r]`` compare rounds ``r`` and ``r+1``;
    ``ratios[r] = w1_pooled[r+1] / w1_pooled[r]``;  ``lipschitz_cp[r]`` bounds
    how far the calibrated threshold moved per unit of score shift between
    rounds ``r`` and ``r+1``.  Undefined ratios are ``None``.
    """

    w1_per_step: np.ndarray
    w1_pooled: np.ndarray
    ratios: list
    lipschitz_cp: list

    @property
    def mean_ratio(self) -> float | None:
        vals = [r for r in self.ratios if r is not None]
        return float(np.mean(vals)) if vals else None


def _ratio(num: float, den: float):
    return float(num / den) if den > RATIO_FLOOR else None


def contraction_estimate(
    score_sets: Sequence[np.ndarray],
    epsilon: float | None = None,
    q_hats: Sequence[QuantileVector] | None = None,
) -> ShiftEstimate:
    """Shift and contraction diagnostics from per-round ``(K, H)`` score matrices.

    Threshold movement uses ``q_hats`` if given, otherwise thresholds
    recalibrated from each round's scores at ``epsilon``.
    """
    if len(score_sets) < 3:
        raise ValueError("need scores from at least three rounds")
    sets = [np.asarray(s, dtype=float) for s in score_sets]
    H = sets[0].shape[1]
    per_step = np.array(
        [[w1_1d(sets[r][:, k], sets[r + 1][:, k]) for k in range(H)] for r in range(len(sets) - 1)]
    )
    pooled = np.array([w1_1d(sets[r], sets[r + 1]) for r in range(len(sets) - 1)])
    ratios = [_ratio(pooled[r + 1], pooled[r]) for r in range(len(pooled) - 1)]

    if q_hats is None and epsilon is not None:
        q_hats = [calibrate(s, epsilon) for s in sets]
    lips: list = []
    if q_hats is not None:
        for r in range(len(sets) - 1):
            a, b = q_hats[r], q_hats[r + 1]
            if a.has_infinite or b.has_infinite:
                lips.append(None)
                continue
            vals = [
                abs(b.values[k] - a.values[k]) / per_step[r, k]
                for k in range(H)
                if per_step[r, k] > RATIO_FLOOR
            ]
            lips.append(float(max(vals)) if vals else None)
    return ShiftEstimate(per_step, pooled, ratios, lips)


def write_shift_csv(path, estimates: dict) -> None:
    """One row per (agent, round pair); ``estimates`` maps agent -> ShiftEstimate."""
    H = next(iter(estimates.values())).w1_per_step.shape[1] if estimates else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "iteration", "w1_pooled", *[f"w1_k{k}" for k in range(1, H + 1)], "ratio", "lipschitz_cp"])
        for agent, est in sorted(estimates.items()):
            for r in range(est.w1_pooled.shape[0]):
                ratio = est.ratios[r] if r < len(est.ratios) else None
                lip = est.lipschitz_cp[r] if r < len(est.lipschitz_cp) else None
                w.writerow(
                    [agent, r, repr(float(est.w1_pooled[r])), *[repr(float(x)) for x in est.w1_per_step[r]],
                     "" if ratio is None else repr(ratio), "" if lip is None else repr(lip)]
                )
