"""Scalar root finding for the common-odds equation."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import InfeasibleError

SUM_TOL = 1e-12


def weighted_center_sum(A: float, probs: Sequence[float], weights: Sequence[float]) -> float:
    return math.fsum(w * p / (p + A * (1.0 - p)) for p, w in zip(probs, weights))


def solve_common_odds(probs: Sequence[float], weights: Sequence[float], target: float) -> float:
    """Return the unique ``A > 0`` with ``sum_i w_i p_i / (p_i + A (1-p_i)) = target``.

    The left side decreases strictly from ``sum(w)`` (A -> 0) to 0 (A -> inf),
    so bisection on ``log A`` converges.  The bracket starts at
    ``[1e-8, 1e8]`` and is widened until the sign condition holds.
    """
    probs = [float(p) for p in probs]
    weights = [float(w) for w in weights]
    total = math.fsum(weights)
    if not (0.0 < target < total):
        raise InfeasibleError("infeasible center system")

    def f(log_a: float) -> float:
        return weighted_center_sum(math.exp(log_a), probs, weights) - target

    eps = 1e-8
    lo, hi = math.log(eps), -math.log(eps)
    while f(lo) < 0:
        lo *= 2
        if lo < -1400:
            raise InfeasibleError("infeasible center system")
    while f(hi) > 0:
        hi *= 2
        if hi > 1400:
            raise InfeasibleError("infeasible center system")

    best, best_res = lo, abs(f(lo))
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = f(mid)
        if abs(fm) < best_res:
            best, best_res = mid, abs(fm)
        if fm == 0.0 or best_res <= SUM_TOL:
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return math.exp(best)


def centers_from_odds(A: float, probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return p / (p + A * (1.0 - p))
