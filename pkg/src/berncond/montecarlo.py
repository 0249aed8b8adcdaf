"""Exact sampling of conditioned block counts and empirical limit checks.

Draws are exact: the conditioned total is drawn from its exact law, then
block counts are drawn one block at a time from their exact conditional law
given the remaining total (a ratio of convolutions).  Work is split into
fixed-size chunks, each with its own stream derived from ``(seed, side,
chunk)``, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
from scipy.special import ndtr

from . import asymptotics as asy
from ._io import write_csv
from ._tables import BlockTables
from .model import (
    BlockSystem,
    CondKind,
    ConditioningSpec,
    ConfigError,
    DiscretePMF,
    check_side,
    validate,
)
from .transport import betas, max_coupling_scalar

CHUNK_SIZE = 8192
N_BOOT = 1000
CI_LEVEL = 0.95
LLN_EPS = (0.05, 0.02, 0.01)
SIDE_KEY = {"X": 0, "Y": 1}
BOOT_KEY = 2


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("BERNCOND_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def chunk_rng(seed: int, side: str, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(SIDE_KEY[side], int(chunk)))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# sampler
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleBatch:
    n: int
    side: str
    cond: ConditioningSpec
    k: int
    sizes: tuple[int, ...]
    counts: np.ndarray = field(repr=False)  # shape (size, M)
    seed: int

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def subset_sum(self, blocks: Sequence[int]) -> np.ndarray:
        return self.counts[:, list(blocks)].sum(axis=1)

    def joint_frequencies(self) -> DiscretePMF:
        vals, cnt = np.unique(self.counts, axis=0, return_counts=True)
        return DiscretePMF(vals, cnt / cnt.sum())

    def write_csv(self, fh: TextIO, provenance=None) -> None:
        header = [f"x{i + 1}" for i in range(self.counts.shape[1])]
        write_csv(fh, header, self.counts.tolist(), provenance)


class _Sampler:
    """Shared tables plus a cache of per-block conditional CDFs."""

    def __init__(self, system: BlockSystem, side: str, n: int, cond: ConditioningSpec):
        self.k = cond.k(n)
        self.sizes = system.sizes(n)
        self.kind = cond.kind
        self.tables = BlockTables.for_condition(system.probs(side), self.sizes, cond.kind, self.k)
        s, pr = self.tables.total_law(cond.kind, self.k)
        self.total_support = s
        self.total_cdf = np.cumsum(pr)
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _block_cdf(self, i: int, remaining: int):
        key = (i, remaining)
        hit = self._cache.get(key)
        if hit is None:
            x, w = self.tables.conditional_block(i, remaining)
            hit = (x, np.cumsum(w))
            self._cache[key] = hit
        return hit

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        M = len(self.sizes)
        u = rng.random((size, M))
        idx = np.searchsorted(self.total_cdf, u[:, 0] * self.total_cdf[-1], side="right")
        remaining = self.total_support[np.minimum(idx, self.total_support.size - 1)].astype(np.int64)
        out = np.empty((size, M), dtype=np.int64)
        for i in range(M - 1):
            col = np.empty(size, dtype=np.int64)
            order = np.argsort(remaining, kind="stable")
            vals, starts = np.unique(remaining[order], return_index=True)
            bounds = np.append(starts, size)
            for r, a, b in zip(vals.tolist(), bounds[:-1], bounds[1:]):
                rows = order[a:b]
                x, cdf = self._block_cdf(i, r)
                pick = np.searchsorted(cdf, u[rows, i + 1] * cdf[-1], side="right")
                col[rows] = x[np.minimum(pick, x.size - 1)]
            out[:, i] = col
            remaining = remaining - col
        out[:, M - 1] = remaining
        return out


def sample_conditioned(
    system: BlockSystem,
    side: str,
    n: int,
    cond: ConditioningSpec,
    size: int,
    seed: int,
    chunk_size: int = CHUNK_SIZE,
    workers: int | None = None,
) -> SampleBatch:
    """Exact draws of the block counts of X (or Y) given the conditioning event."""
    side = check_side(side)
    validate(system, cond, n).raise_if_failed()
    if size < 1:
        raise ConfigError("size must be positive")
    sampler = _Sampler(system, side, n, cond)
    n_chunks = -(-size // chunk_size)
    lengths = [min(chunk_size, size - c * chunk_size) for c in range(n_chunks)]

    def run(c: int) -> np.ndarray:
        return sampler.draw(chunk_rng(seed, side, c), lengths[c])

    n_workers = workers if workers is not None else worker_count(n_chunks)
    if n_workers <= 1:
        parts = [run(c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    counts = np.concatenate(parts, axis=0)
    return SampleBatch(n, side, cond, sampler.k, sampler.sizes, counts, int(seed))


# --------------------------------------------------------------------------
# law of large numbers
# --------------------------------------------------------------------------


def lln_targets(system: BlockSystem, side: str, cond: ConditioningSpec) -> np.ndarray:
    """Limits of ``X~_in / n``: ``p_i alpha_i`` at or below the mean, ``c_i alpha_i`` above it."""
    side = check_side(side)
    probs = system.probs(side)
    alpha = np.array(system.alpha)
    mean = float(np.dot(probs, alpha))
    if cond.kind is CondKind.AT_LEAST and cond.alpha <= mean + asy.ALPHA_TOL:
        return probs * alpha
    sol = asy.solve_centers(probs, system.alpha, cond.alpha)
    return np.array(sol.c) * alpha


def lln_check(
    system: BlockSystem,
    side: str,
    n_grid: Sequence[int],
    cond: ConditioningSpec,
    size: int = 10_000,
    seed: int = 0,
    eps: Sequence[float] = LLN_EPS,
) -> list[dict]:
    """Empirical ``P(|X~_in / n - limit_i| > eps)`` per n, block and eps."""
    target = lln_targets(system, side, cond)
    rows = []
    for n in n_grid:
        batch = sample_conditioned(system, side, int(n), cond, size, seed)
        dev = np.abs(batch.counts / n - target)
        for i in range(system.M):
            for e in eps:
                rows.append(
                    {"n": int(n), "side": batch.side, "block": i + 1, "limit": float(target[i]),
                     "eps": float(e), "prob": float(np.mean(dev[:, i] > e))}
                )
    return rows


# --------------------------------------------------------------------------
# weak limits
# --------------------------------------------------------------------------


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance between the empirical law of ``samples`` and a continuous CDF."""
    vals, cnt = np.unique(np.asarray(samples, dtype=np.float64), return_counts=True)
    right = np.cumsum(cnt) / cnt.sum()
    left = right - cnt / cnt.sum()
    F = np.asarray(cdf(vals), dtype=np.float64)
    return float(max(np.max(right - F), np.max(F - left)))


def _sum_over_i_reference(system: BlockSystem, side: str, cond: ConditioningSpec):
    """Limit CDF of ``sum_{i in I}(count_i - q_i m_i) / sqrt(n)``."""
    report = asy.classify_regime(system, cond)
    if report.regime == "AllBetaEqual":
        raise ConfigError("sum-over-I limit needs unequal betas")
    a = report.abc.a
    if side == "Y":
        if not cond.alpha < report.sum_q_alpha - asy.ALPHA_TOL:
            raise ConfigError("Y-side limit needs alpha below sum q_i alpha_i")
        return lambda z: ndtr(np.asarray(z) / a)
    if report.regime != "Critical":
        raise ConfigError("X-side limit is only available in the critical regime")
    return lambda z: asy.f_k(system, report.K, z)


def block_limit(system: BlockSystem, side: str, n: int, cond: ConditioningSpec, i: int):
    """``(centre, cdf)``: block i scaled as ``(count - centre) / sqrt(n)`` tends to ``cdf``."""
    side = check_side(side)
    probs = system.probs(side)
    alpha = np.array(system.alpha)
    m = system.sizes(n)
    mean = float(np.dot(probs, alpha))
    s2p = probs * (1 - probs) * alpha
    if cond.kind is CondKind.AT_LEAST and cond.alpha < mean - asy.ALPHA_TOL:
        sd = math.sqrt(s2p[i])
        return probs[i] * m[i], lambda z: ndtr(np.asarray(z) / sd)
    if cond.kind is CondKind.AT_LEAST and abs(cond.alpha - mean) <= asy.ALPHA_TOL:
        own = math.sqrt(s2p[i])
        rest = math.sqrt(s2p.sum() - s2p[i])
        K = cond.K
        return probs[i] * m[i], lambda z: asy.halfspace_cdf(z, own, rest, K)
    k = cond.k(n)
    fin = asy.solve_centers(probs, m, k, "finite")
    lim = np.array(asy.solve_centers(probs, system.alpha, cond.alpha).c)
    sd = math.sqrt(asy.singular_marginal_variance(lim * (1 - lim) * alpha, i))
    return fin.c[i] * m[i], lambda z: ndtr(np.asarray(z) / sd)


def weak_limit_check(
    system: BlockSystem,
    n_grid: Sequence[int],
    cond: ConditioningSpec,
    functional: str = "sum-over-I",
    side: str = "X",
    size: int = 10_000,
    seed: int = 0,
) -> list[dict]:
    """KS distance between a scaled linear functional and its limit CDF, per n."""
    side = check_side(side)
    rows = []
    if functional == "sum-over-I":
        ref = _sum_over_i_reference(system, side, cond)
        I = list(betas(system).I)
        q = np.array(system.q)
        for n in n_grid:
            batch = sample_conditioned(system, side, int(n), cond, size, seed)
            centre = float(np.dot(q[I], np.array(batch.sizes)[I]))
            stat = (batch.subset_sum(I) - centre) / math.sqrt(n)
            rows.append({"n": int(n), "side": side, "functional": functional, "block": "",
                         "ks": ks_distance(stat, ref)})
    elif functional == "per-block":
        for n in n_grid:
            batch = sample_conditioned(system, side, int(n), cond, size, seed)
            for i in range(system.M):
                centre, ref = block_limit(system, side, int(n), cond, i)
                stat = (batch.counts[:, i] - centre) / math.sqrt(n)
                rows.append({"n": int(n), "side": side, "functional": functional, "block": i + 1,
                             "ks": ks_distance(stat, ref)})
    else:
        raise ConfigError("functional must be 'sum-over-I' or 'per-block'")
    return rows


# --------------------------------------------------------------------------
# maximal ordered coupling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SupEstimate:
    n: int
    size: int
    estimate: float
    ci_low: float
    ci_high: float
    lower_bracket: float
    upper_bracket: float
    exact: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _empirical(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, cnt = np.unique(values, return_counts=True)
    return vals, cnt


def _inf_gap(xv, xc, yv, yc) -> float:
    return max_coupling_scalar(DiscretePMF(xv, xc / xc.sum()), DiscretePMF(yv, yc / yc.sum()))


def sup_prob_estimate(
    system: BlockSystem,
    n: int,
    cond: ConditioningSpec,
    size: int,
    seed: int,
    n_boot: int = N_BOOT,
    level: float = CI_LEVEL,
) -> SupEstimate:
    """Monte Carlo estimate of ``sup P(X~_n <= Y~_n)`` through the maximal-beta block sums.

    The estimate is ``inf_z F(z) - G(z) + 1`` for the empirical CDFs of the
    summed counts over the maximal-beta blocks, with a percentile bootstrap
    interval.  Brackets: ``upper`` is the smallest per-block scalar sup (a
    bound for every coupling), ``lower`` is ``1 - sum_i [P(X~_i > t_i) +
    P(Y~_i < t_i)]`` with ``t_i`` halfway between the two limits of block i.
    """
    bt = betas(system)
    if bt.all_equal:
        return SupEstimate(n, size, 1.0, 1.0, 1.0, 1.0, 1.0, exact=True)
    bx = sample_conditioned(system, "X", n, cond, size, seed)
    by = sample_conditioned(system, "Y", n, cond, size, seed)
    I = list(bt.I)
    xv, xc = _empirical(bx.subset_sum(I))
    yv, yc = _empirical(by.subset_sum(I))
    est = _inf_gap(xv, xc, yv, yc)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(BOOT_KEY,))))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        rx = rng.multinomial(size, xc / xc.sum())
        ry = rng.multinomial(size, yc / yc.sum())
        kx, ky = rx > 0, ry > 0
        boots[b] = _inf_gap(xv[kx], rx[kx], yv[ky], ry[ky])
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(boots, [tail, 1.0 - tail])

    upper = 1.0
    for i in range(system.M):
        fv, fc = _empirical(bx.counts[:, i])
        gv, gc = _empirical(by.counts[:, i])
        upper = min(upper, _inf_gap(fv, fc, gv, gc))
    tx = lln_targets(system, "X", cond)
    ty = lln_targets(system, "Y", cond)
    t = np.floor(n * (tx + ty) / 2.0)
    miss = np.mean(bx.counts > t, axis=0) + np.mean(by.counts < t, axis=0)
    lower = max(0.0, 1.0 - float(miss.sum()))
    return SupEstimate(n, size, est, float(lo), float(hi), lower, upper)


__all__ = [
    "SampleBatch",
    "SupEstimate",
    "block_limit",
    "chunk_rng",
    "ks_distance",
    "lln_check",
    "lln_targets",
    "sample_conditioned",
    "sup_prob_estimate",
    "weak_limit_check",
    "worker_count",
]
