"""Exponentially tilted binomial convolution tables.

Conditional laws given ``{sum == s}`` do not change when every block
probability is tilted by the same odds factor ``theta``: block i becomes
Binomial(m_i, p_i*theta / (1 - p_i + p_i*theta)).  Choosing ``theta`` so the
tilted mean sits at the conditioning threshold keeps every table entry that
matters within a few standard deviations of its mode, so plain float64
convolution stays accurate for n far beyond the underflow range of the raw
binomial tails.  For ``{sum >= k}`` the weight of total ``s`` is the tilted
mass times ``theta**-(s-k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.stats import binom

from ._numerics import solve_common_odds
from .model import CondKind, InfeasibleError


@dataclass(frozen=True)
class Trimmed:
    """Array ``arr`` holding values at integer positions ``lo, lo+1, ...``."""

    lo: int
    arr: np.ndarray

    @property
    def hi(self) -> int:
        return self.lo + self.arr.shape[0] - 1

    def at(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        pos = idx - self.lo
        ok = (pos >= 0) & (pos < self.arr.shape[0])
        out = np.zeros(idx.shape, dtype=np.float64)
        out[ok] = self.arr[pos[ok]]
        return out


def trim(lo: int, arr: np.ndarray) -> Trimmed:
    nz = np.flatnonzero(arr > 0)
    if nz.size == 0:
        return Trimmed(lo, np.zeros(1))
    return Trimmed(lo + int(nz[0]), arr[nz[0] : nz[-1] + 1].copy())


def convolve(a: Trimmed, b: Trimmed) -> Trimmed:
    return trim(a.lo + b.lo, np.convolve(a.arr, b.arr))


def tilt_for(kind: CondKind, k: int, probs, sizes) -> float:
    """Log tilt that centres the tables at the relevant totals."""
    n = int(sum(sizes))
    mean = float(np.dot(probs, sizes))
    target = float(k)
    if kind is CondKind.AT_LEAST:
        target = max(target, mean)
    target = min(max(target, 0.5), n - 0.5)
    if n == 1 or abs(target - mean) < 1e-12:
        return 0.0
    return -math.log(solve_common_odds(probs, sizes, target))


class BlockTables:
    """Tilted block pmfs with suffix convolutions for sequential conditioning."""

    def __init__(self, probs, sizes, log_theta: float = 0.0):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.sizes = tuple(int(m) for m in sizes)
        self.log_theta = float(log_theta)
        theta = math.exp(self.log_theta)
        tilted = self.probs * theta / (1.0 - self.probs + self.probs * theta)
        self.tilted_probs = tilted
        self.blocks = [
            trim(0, binom.pmf(np.arange(m + 1), m, t)) for m, t in zip(self.sizes, tilted)
        ]
        M = len(self.sizes)
        self.suffix: list[Trimmed] = [Trimmed(0, np.ones(1))] * (M + 1)
        for i in range(M - 1, -1, -1):
            self.suffix[i] = convolve(self.blocks[i], self.suffix[i + 1])
        self._others: dict[int, Trimmed] = {}

    @classmethod
    def for_condition(cls, probs, sizes, kind: CondKind, k: int) -> "BlockTables":
        return cls(probs, sizes, tilt_for(kind, k, probs, sizes))

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def total_law(self, kind: CondKind, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of the conditioned total."""
        if not 0 <= k <= self.n:
            raise InfeasibleError("impossible condition")
        if kind is CondKind.EXACTLY:
            return np.array([k]), np.array([1.0])
        s0 = self.suffix[0]
        s = np.arange(max(k, s0.lo), s0.hi + 1)
        with np.errstate(divide="ignore"):
            logw = np.log(s0.at(s)) - (s - k) * self.log_theta
        if s.size == 0 or not np.any(np.isfinite(logw)):
            raise InfeasibleError("impossible condition")
        w = np.exp(logw - logw.max())
        keep = w > 0
        return s[keep], w[keep] / w.sum()

    def others(self, i: int) -> Trimmed:
        """Tilted law of the total over all blocks except ``i``."""
        if i not in self._others:
            acc = Trimmed(0, np.ones(1))
            for j, b in enumerate(self.blocks):
                if j != i:
                    acc = convolve(acc, b)
            self._others[i] = acc
        return self._others[i]

    def block_marginal(self, i: int, kind: CondKind, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Law of the count in block ``i`` under the conditioning."""
        blk = self.blocks[i]
        x = np.arange(blk.lo, blk.hi + 1)
        rest = self.others(i)
        if kind is CondKind.EXACTLY:
            w = blk.arr * rest.at(k - x)
        else:
            # weight of (x, t) with x + t >= k is blk[x] rest[t] theta**-(x+t-k);
            # g(u) = sum_{t >= u} rest[t] theta**-(t-u) via backward recursion
            g = lfilter([1.0], [1.0, -math.exp(-self.log_theta)], rest.arr[::-1])[::-1]
            u0 = k - x
            w = np.zeros(x.shape)
            inside = (u0 >= rest.lo) & (u0 <= rest.hi)
            w[inside] = g[u0[inside] - rest.lo]
            below = u0 < rest.lo
            w[below] = g[0] * np.exp(-(rest.lo - u0[below]) * self.log_theta)
            w *= blk.arr
        total = w.sum()
        if not total > 0:
            raise InfeasibleError("impossible condition")
        keep = w > 0
        return x[keep], w[keep] / total

    def conditional_block(self, i: int, remaining: int) -> tuple[np.ndarray, np.ndarray]:
        """Law of block ``i`` given that blocks ``i..M-1`` hold ``remaining`` successes."""
        blk = self.blocks[i]
        x = np.arange(blk.lo, blk.hi + 1)
        w = blk.arr * self.suffix[i + 1].at(remaining - x)
        total = w.sum()
        if not total > 0:
            raise InfeasibleError("impossible condition")
        return x, w / total
