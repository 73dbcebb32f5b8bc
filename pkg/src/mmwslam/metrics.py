"""Map and vehicle-state error metrics.

GOSPA compares an estimated source set against the ground-truth set: the
optimal assignment of cutoff-clamped distances (raised to the metric power)
plus a cardinality-mismatch penalty of cutoff^power / alpha per unmatched
element, all taken to the 1/power root.  With alpha = 2 (the value used
throughout) the clamped full assignment over min(|truth|, |estimate|) pairs
is exactly equivalent to the reference assignment-set definition.

Vehicle-state errors are aggregated as MAE and RMSE per component over the
steady-state portion of the runs: Euclidean error for the location,
absolute error for the clock bias, wrapped absolute error for the heading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .motion import IDX_BIAS, IDX_HEAD, wrap_angle


@dataclass(frozen=True)
class GospaParams:
    cutoff: float = 20.0
    alpha: float = 2.0
    power: float = 2.0

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError("alpha must be in (0, 2]")
        if self.power < 1.0:
            raise ValueError("power must be >= 1")


def gospa(truth, estimate, params: GospaParams = GospaParams()) -> float:
    """GOSPA distance between two finite sets of 3-D points.

    Args:
        truth: array (n, 3) (or empty).
        estimate: array (m, 3) (or empty).
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    estimate = np.asarray(estimate, dtype=float).reshape(-1, 3)
    n, m = len(truth), len(estimate)
    c, p = params.cutoff, params.power
    miss = c ** p / params.alpha

    total = miss * abs(n - m)
    if n and m:
        dist = np.linalg.norm(truth[:, None, :] - estimate[None, :, :],
                              axis=-1)
        cost = np.minimum(dist, c) ** p
        rows, cols = linear_sum_assignment(cost)
        total += float(cost[rows, cols].sum())
    return float(total ** (1.0 / p))


@dataclass(frozen=True)
class ErrorStats:
    mae: float
    rmse: float


def _stats(err: np.ndarray) -> ErrorStats:
    err = np.abs(np.asarray(err, dtype=float).ravel())
    return ErrorStats(mae=float(np.mean(err)),
                      rmse=float(np.sqrt(np.mean(err ** 2))))


def mae_rmse(estimates, truth, steps, k_start: int = 20) -> dict:
    """Steady-state vehicle-state error statistics.

    Args:
        estimates: state estimates (..., n_steps, 7).
        truth: matching true states, same shape.
        steps: time-step index per entry of the step axis, (n_steps,).
        k_start: only steps strictly greater than this are aggregated.

    Returns:
        dict with ErrorStats for "location" (Euclidean, m), "bias" (m) and
        "heading" (wrapped, rad).
    """
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    steps = np.asarray(steps)
    mask = steps > k_start
    if not np.any(mask):
        raise ValueError("no steps beyond the steady-state start")
    est = estimates[..., mask, :]
    tru = truth[..., mask, :]
    loc = np.linalg.norm(est[..., :3] - tru[..., :3], axis=-1)
    bias = est[..., IDX_BIAS] - tru[..., IDX_BIAS]
    heading = wrap_angle(est[..., IDX_HEAD] - tru[..., IDX_HEAD])
    return {"location": _stats(loc), "bias": _stats(bias),
            "heading": _stats(heading)}
