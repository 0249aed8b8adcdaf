"""Exact finite-n laws of Bernoulli vectors conditioned on their sum.

Covers Poisson-binomial sum laws, conditional block-count laws given
``{sum == k}`` or ``{sum >= k}``, the successive-sum quotients, the
growth weights that couple ``Law(X | sum == k)`` monotonically in k, and the
two-stage construction that orders ``Law(X | sum >= k)`` below
``Law(Y | sum >= k)`` when all odds ratios agree.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binom

from ._tables import BlockTables
from .model import (
    BlockSystem,
    CondKind,
    ConditioningSpec,
    ConfigError,
    DiscretePMF,
    InfeasibleError,
    InstanceTooLargeError,
    check_side,
    validate,
)

MAX_JOINT_STATES = 2_000_000
MAX_VECTOR_N = 22
BETA_TOL = 1e-12


def _as_probs(probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ConfigError("empty probability list")
    if np.any((p <= 0) | (p >= 1)):
        raise ConfigError("probabilities must lie in (0,1)")
    return p


def _kind(cond) -> CondKind:
    return cond.kind if isinstance(cond, ConditioningSpec) else CondKind(cond)


# --------------------------------------------------------------------------
# sum laws
# --------------------------------------------------------------------------


def sum_law(probs: Sequence[float]) -> DiscretePMF:
    """Law of ``sum X_i`` for independent ``X_i ~ Bernoulli(probs[i])``."""
    p = _as_probs(probs)
    pmf = np.ones(1)
    for pi in p:
        pmf = np.convolve(pmf, [1.0 - pi, pi])
    return DiscretePMF(np.arange(p.size + 1), pmf)


def _suffix_sum_tables(p: np.ndarray) -> list[np.ndarray]:
    """``T[i][r] = P(X_i + ... + X_{n-1} = r)``; ``T[n] = [1]``."""
    n = p.size
    tables = [np.ones(1)] * (n + 1)
    for i in range(n - 1, -1, -1):
        tables[i] = np.convolve(tables[i + 1], [1.0 - p[i], p[i]])
    return tables


def block_sum_law(system: BlockSystem, side: str, n: int) -> DiscretePMF:
    """Law of the total number of successes: a convolution of M binomials."""
    validate(system, None, n).raise_if_failed()
    pmf = np.ones(1)
    for m, pi in zip(system.sizes(n), system.probs(side)):
        pmf = np.convolve(pmf, binom.pmf(np.arange(m + 1), m, pi))
    return DiscretePMF(np.arange(n + 1), pmf)


# --------------------------------------------------------------------------
# conditional block-count laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockCountLaw:
    """Joint law of the block success counts ``(X_1n, ..., X_Mn)``."""

    n: int
    sizes: tuple[int, ...]
    kind: CondKind
    k: int
    pmf: DiscretePMF

    @property
    def dim(self) -> int:
        return len(self.sizes)


def _tables(system: BlockSystem, side: str, n: int, cond: ConditioningSpec) -> tuple[BlockTables, int]:
    validate(system, cond, n).raise_if_failed()
    k = cond.k(n)
    sizes = system.sizes(n)
    return BlockTables.for_condition(system.probs(side), sizes, cond.kind, k), k


def conditional_block_law(
    system: BlockSystem,
    side: str,
    n: int,
    cond: ConditioningSpec,
    max_states: int = MAX_JOINT_STATES,
) -> BlockCountLaw:
    """Exact joint law of the block counts given the conditioning event.

    Only feasible vectors are stored.  Raises ``InstanceTooLargeError`` when
    the box of candidate vectors exceeds ``max_states``.
    """
    side = check_side(side)
    tables, k = _tables(system, side, n, cond)
    ranges = [np.arange(b.lo, b.hi + 1) for b in tables.blocks]
    box = math.prod(r.size for r in ranges)
    if box > max_states:
        raise InstanceTooLargeError("instance too large")
    grids = np.meshgrid(*ranges, indexing="ij")
    states = np.stack([g.reshape(-1) for g in grids], axis=1)
    w = np.ones(states.shape[0])
    for i, b in enumerate(tables.blocks):
        w *= b.arr[states[:, i] - b.lo]
    total = states.sum(axis=1)
    if cond.kind is CondKind.EXACTLY:
        feasible = total == k
        logw = np.zeros(states.shape[0])
    else:
        feasible = total >= k
        logw = -(total - k) * tables.log_theta
    states, w, logw = states[feasible], w[feasible], logw[feasible]
    if states.shape[0] == 0:
        raise InfeasibleError("impossible condition")
    with np.errstate(divide="ignore"):
        lw = np.log(w) + logw
    if not np.any(np.isfinite(lw)):
        raise InfeasibleError("impossible condition")
    weights = np.exp(lw - lw.max())
    pmf = DiscretePMF.from_weights(states, weights)
    return BlockCountLaw(n, system.sizes(n), cond.kind, k, pmf)


def block_marginals(system: BlockSystem, side: str, n: int, cond: ConditioningSpec) -> list[DiscretePMF]:
    """Per-block conditional laws, each block combined with the convolution of the others."""
    tables, k = _tables(system, check_side(side), n, cond)
    out = []
    for i in range(system.M):
        x, pr = tables.block_marginal(i, cond.kind, k)
        out.append(DiscretePMF(x, pr))
    return out


def conditional_sum_law(system: BlockSystem, side: str, n: int, cond: ConditioningSpec) -> DiscretePMF:
    tables, k = _tables(system, check_side(side), n, cond)
    s, pr = tables.total_law(cond.kind, k)
    return DiscretePMF(s, pr)


def conditioned_sum_law(probs: Sequence[float], kind, k: int) -> DiscretePMF:
    """Law of ``sum X_i`` given ``{sum == k}`` or ``{sum >= k}`` for per-site probabilities."""
    base = sum_law(probs)
    kind = _kind(kind)
    keep = base.support == k if kind is CondKind.EXACTLY else base.support >= k
    return DiscretePMF.from_weights(base.support[keep], base.probs[keep])


def full_vector_law(probs: Sequence[float], kind, k: int) -> DiscretePMF:
    """Law of the 0/1 vector itself under the conditioning (small n only)."""
    p = _as_probs(probs)
    n = p.size
    if n > MAX_VECTOR_N:
        raise InstanceTooLargeError("instance too large")
    if not 0 <= k <= n:
        raise InfeasibleError("impossible condition")
    states = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    total = states.sum(axis=1)
    kind = _kind(kind)
    keep = total == k if kind is CondKind.EXACTLY else total >= k
    states = states[keep]
    logw = states @ np.log(p) + (1 - states) @ np.log1p(-p)
    return DiscretePMF.from_weights(states, np.exp(logw - logw.max()))


# --------------------------------------------------------------------------
# quotients
# --------------------------------------------------------------------------


def quotient_q(probs: Sequence[float], k: int) -> float:
    """``P(sum == k+1) / P(sum == k)``."""
    law = sum_law(probs).probs
    n = law.size - 1
    if not 0 <= k <= n - 1:
        raise ConfigError("k must lie in {0, ..., n-1}")
    if law[k] == 0:
        raise InfeasibleError("denominator is zero")
    return float(law[k + 1] / law[k])


def quotient_geq(probs: Sequence[float], k: int) -> float:
    """``P(sum >= k+1) / P(sum >= k)``."""
    law = sum_law(probs).probs
    n = law.size - 1
    if not 0 <= k <= n - 1:
        raise ConfigError("k must lie in {0, ..., n-1}")
    tail = np.cumsum(law[::-1])[::-1]
    if tail[k] == 0:
        raise InfeasibleError("denominator is zero")
    return float(tail[k + 1] / tail[k])


# --------------------------------------------------------------------------
# monotone coupling of Law(X | sum == k) in k
# --------------------------------------------------------------------------


def _esp(values: np.ndarray) -> np.ndarray:
    """Elementary symmetric polynomials ``e_0..e_len`` of ``values``."""
    e = np.zeros(values.size + 1)
    e[0] = 1.0
    for v in values:
        e[1:] = e[1:] + v * e[:-1]
    return e


def gamma_weights(probs: Sequence[float], I) -> tuple[np.ndarray, np.ndarray]:
    """Growth weights for adding one site to the success set ``I``.

    Returns ``(js, weights)`` where ``js`` lists the sites outside ``I`` in
    increasing order.  The weight of ``j`` sums, over sets ``L`` of size
    ``|I| + 1`` that contain ``j``, the conditional probability that exactly
    ``L`` succeeds given ``sum == |I| + 1``, divided by ``|L \\ I|``.
    Computed by splitting ``L \\ {j}`` into its parts inside and outside ``I``
    and summing elementary symmetric polynomials of the odds.
    """
    p = _as_probs(probs)
    n = p.size
    I = sorted({int(i) for i in I})
    if any(i < 0 or i >= n for i in I):
        raise ConfigError("index outside 0..n-1")
    k = len(I)
    if k >= n:
        raise ConfigError("|I| must be smaller than n")
    odds = p / (1.0 - p)
    # common rescaling leaves every ratio unchanged and keeps the polynomials in range
    odds = odds / math.exp(np.mean(np.log(odds)))
    in_I = np.zeros(n, dtype=bool)
    in_I[I] = True
    js = np.flatnonzero(~in_I)
    e_in = _esp(odds[in_I])
    e_total = _esp(odds)[k + 1]
    t = np.arange(k + 1)
    weights = np.empty(js.size)
    for idx, j in enumerate(js):
        rest = ~in_I
        rest[j] = False
        e_out = _esp(odds[rest])
        # L \ {j} takes t sites from I and k - t from outside I (not j)
        e_out_part = np.where(k - t <= e_out.size - 1, e_out[np.minimum(k - t, e_out.size - 1)], 0.0)
        weights[idx] = odds[j] * np.sum(e_in[t] * e_out_part / (k + 1 - t)) / e_total
    return js, weights


def sample_given_sum(probs: Sequence[float], k, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw 0/1 vectors from ``Law(X | sum == k)``; ``k`` may be an array of length ``size``."""
    p = _as_probs(probs)
    n = p.size
    scalar = size is None
    size = 1 if scalar else int(size)
    remaining = np.broadcast_to(np.asarray(k, dtype=np.int64), (size,)).copy()
    if np.any((remaining < 0) | (remaining > n)):
        raise InfeasibleError("impossible condition")
    tables = _suffix_sum_tables(p)
    out = np.zeros((size, n), dtype=np.int64)
    u = rng.random((size, n))
    for i in range(n):
        t_here, t_next = tables[i], tables[i + 1]
        num = p[i] * np.where(remaining >= 1, t_next[np.clip(remaining - 1, 0, t_next.size - 1)], 0.0)
        num = np.where(remaining - 1 <= t_next.size - 1, num, 0.0)
        prob_one = num / t_here[remaining]
        take = u[:, i] < prob_one
        out[take, i] = 1
        remaining -= take
    return out[0] if scalar else out


def _grow(probs: np.ndarray, u: np.ndarray, targets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add sites to each row of ``u`` by growth-weight draws until its sum hits ``targets``."""
    v = u.copy()
    cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
    while True:
        active = np.flatnonzero(v.sum(axis=1) < targets)
        if active.size == 0:
            return v
        keys = np.packbits(v[active].astype(np.uint8), axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        draws = rng.random(active.size)
        for g in range(uniq.shape[0]):
            rows = active[inv == g]
            key = uniq[g].tobytes()
            if key not in cache:
                cache[key] = gamma_weights(probs, np.flatnonzero(v[rows[0]]))
            js, w = cache[key]
            cdf = np.cumsum(w)
            pick = np.searchsorted(cdf, draws[inv == g] * cdf[-1], side="right")
            v[rows, js[np.minimum(pick, js.size - 1)]] = 1


def monotone_chain_sample(
    probs: Sequence[float],
    k_from: int,
    k_to: int,
    rng: np.random.Generator,
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Coupled draws ``u ~ Law(X | sum == k_from)``, ``v ~ Law(X | sum == k_to)`` with ``u <= v``."""
    p = _as_probs(probs)
    if not 0 <= k_from <= k_to <= p.size:
        raise ConfigError("need 0 <= k_from <= k_to <= n")
    scalar = size is None
    u = sample_given_sum(p, k_from, rng, 1 if scalar else size)
    u = np.atleast_2d(u)
    v = _grow(p, u, np.full(u.shape[0], k_to), rng)
    return (u[0], v[0]) if scalar else (u, v)


def betas_equal(p: Sequence[float], q: Sequence[float], tol: float = BETA_TOL) -> bool:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    beta = (p / (1 - p)) * ((1 - q) / q)
    return bool(np.max(beta) - np.min(beta) <= tol)


def dominated_geq_sample(
    p: Sequence[float],
    q: Sequence[float],
    k: int,
    rng: np.random.Generator,
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Ordered draws from ``Law(X | sum >= k)`` and ``Law(Y | sum >= k)``.

    The totals are coupled through a common uniform (quantile coupling);
    given the totals ``m <= m'``, ``u`` is drawn given ``sum == m`` and grown
    to ``m'`` successes with the growth weights of X.  The grown vector has
    ``Law(Y | sum == m')`` because the odds ratios agree.
    """
    p, q = _as_probs(p), _as_probs(q)
    if p.size != q.size:
        raise ConfigError("p and q must have the same length")
    if not betas_equal(p, q):
        raise ConfigError("construction requires equal beta")
    scalar = size is None
    size = 1 if scalar else int(size)
    fx = conditioned_sum_law(p, CondKind.AT_LEAST, k)
    fy = conditioned_sum_law(q, CondKind.AT_LEAST, k)
    w = rng.random(size)
    m = fx.support[np.minimum(np.searchsorted(np.cumsum(fx.probs), w, side="left"), len(fx) - 1)]
    m2 = fy.support[np.minimum(np.searchsorted(np.cumsum(fy.probs), w, side="left"), len(fy) - 1)]
    # rounding guard: the quantile functions are ordered exactly in real arithmetic
    m2 = np.maximum(m2, m)
    u = sample_given_sum(p, m, rng, size)
    v = _grow(p, u, m2, rng)
    return (u[0], v[0]) if scalar else (u, v)
