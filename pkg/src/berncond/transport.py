"""Maximal ordered couplings.

For two laws ``mu`` and ``nu`` on a partially ordered finite set, the largest
achievable ``P(U <= V)`` over couplings of ``U ~ mu`` and ``V ~ nu`` is a
maximum flow: source -> x (capacity mu(x)) -> y whenever x <= y (unbounded)
-> sink (capacity nu(y)).  On the integers the answer has the closed form
``inf_z F(z) - G(z) + 1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, TextIO

import networkx as nx
import numpy as np
from networkx.algorithms.flow import preflow_push

from . import exact
from .model import (
    BlockSystem,
    ConditioningSpec,
    ConfigError,
    DiscretePMF,
    InstanceTooLargeError,
    validate,
)

BETA_TOL = 1e-12
MAX_EDGES = 10_000_000
FLOW_SCALE = 10**12  # capacities are rounded to multiples of 1e-12

Order = Callable[[np.ndarray, np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# odds ratios
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Betas:
    """Odds ratios ``beta_i = (p_i/(1-p_i)) * ((1-q_i)/q_i)`` and their argmax set."""

    beta: tuple[float, ...]
    beta_max: float
    I: tuple[int, ...]

    @property
    def all_equal(self) -> bool:
        return len(self.I) == len(self.beta)

    def to_json(self) -> dict:
        return {"beta": list(self.beta), "beta_max": self.beta_max, "I": list(self.I)}


def betas(system: BlockSystem, tol: float = BETA_TOL) -> Betas:
    p, q = np.array(system.p), np.array(system.q)
    beta = (p / (1.0 - p)) * ((1.0 - q) / q)
    bmax = float(beta.max())
    I = tuple(int(i) for i in np.flatnonzero(beta >= bmax - tol))
    return Betas(tuple(float(b) for b in beta), bmax, I)


# --------------------------------------------------------------------------
# scalar case
# --------------------------------------------------------------------------


def max_coupling_scalar(F: DiscretePMF, G: DiscretePMF) -> float:
    """``sup P(U <= V)`` for integer laws ``U ~ F``, ``V ~ G``.

    Equals ``inf_z F(z) - G(z) + 1``; both CDFs are step functions, so the
    infimum is attained on the union of the supports (or is 1 from below).
    """
    if F.dim != 0 or G.dim != 0:
        raise ConfigError("scalar laws required")
    z = np.union1d(F.support, G.support)
    vals = np.asarray(F.cdf(z)) - np.asarray(G.cdf(z)) + 1.0
    return float(min(1.0, max(0.0, vals.min())))


# --------------------------------------------------------------------------
# vector case
# --------------------------------------------------------------------------


def componentwise_leq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix ``R[a, b] = all(x[a] <= y[b])`` for state arrays of shape (A, d), (B, d)."""
    x = x.reshape(x.shape[0], -1)
    y = y.reshape(y.shape[0], -1)
    out = np.ones((x.shape[0], y.shape[0]), dtype=bool)
    for c in range(x.shape[1]):
        out &= x[:, c, None] <= y[None, :, c]
    return out


@dataclass(frozen=True)
class CouplingPlan:
    """Joint law of (U, V) as parallel arrays of states and masses."""

    u_states: np.ndarray
    v_states: np.ndarray
    mass: np.ndarray
    value: float

    def __len__(self) -> int:
        return self.mass.shape[0]

    def marginal_errors(self, mu: DiscretePMF, nu: DiscretePMF) -> tuple[float, float]:
        """Largest absolute deviation of the plan's marginals from ``mu`` and ``nu``."""

        def err(states, law):
            got = {}
            for s, m in zip(states, self.mass):
                key = tuple(np.atleast_1d(s).tolist())
                got[key] = got.get(key, 0.0) + m
            want = {tuple(np.atleast_1d(s).tolist()): float(pr) for s, pr in zip(law.support, law.probs)}
            keys = set(got) | set(want)
            return max(abs(got.get(k, 0.0) - want.get(k, 0.0)) for k in keys)

        return err(self.u_states, mu), err(self.v_states, nu)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u_state", "v_state", "mass"])
        for u, v, m in zip(self.u_states, self.v_states, self.mass):
            w.writerow([_fmt_state(u), _fmt_state(v), "%.17g" % m])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _fmt_state(s) -> str:
    return ";".join(str(int(v)) for v in np.atleast_1d(s))


def _to_grid(probs: np.ndarray) -> list[int]:
    # largest-remainder rounding so every marginal totals exactly FLOW_SCALE
    scaled = np.asarray(probs, dtype=np.float64) / math.fsum(probs) * FLOW_SCALE
    base = np.floor(scaled).astype(np.int64)
    short = FLOW_SCALE - int(base.sum())
    if short > 0:
        base[np.argsort(-(scaled - base), kind="stable")[:short]] += 1
    return base.tolist()


def max_coupling_vector(
    mu: DiscretePMF,
    nu: DiscretePMF,
    order: Order = componentwise_leq,
    max_edges: int = MAX_EDGES,
) -> tuple[float, CouplingPlan]:
    """Exact ``sup P(U <= V)`` over couplings of ``mu`` and ``nu`` and an optimal plan.

    ``order(x, y)`` returns the boolean relation matrix between two state
    arrays; the default is the componentwise order.  Masses are rounded to a
    1e-12 grid so the flow runs on exact integers.
    """
    if mu.dim != nu.dim:
        raise ConfigError("mu and nu have different dimensions")
    if len(mu) * len(nu) > max_edges:
        raise InstanceTooLargeError("instance too large")
    rel = np.asarray(order(mu.support, nu.support), dtype=bool)
    cap_u = _to_grid(mu.probs)
    cap_v = _to_grid(nu.probs)

    g = nx.DiGraph()
    for a, c in enumerate(cap_u):
        if c > 0:
            g.add_edge("s", ("u", a), capacity=c)
    for b, c in enumerate(cap_v):
        if c > 0:
            g.add_edge(("v", b), "t", capacity=c)
    rows, cols = np.nonzero(rel)
    for a, b in zip(rows.tolist(), cols.tolist()):
        if cap_u[a] > 0 and cap_v[b] > 0:
            g.add_edge(("u", a), ("v", b))  # no capacity attribute: unbounded
    if "s" not in g or "t" not in g:
        flow_value, flow = 0, {}
    else:
        flow_value, flow = nx.maximum_flow(g, "s", "t", flow_func=preflow_push)

    pairs: dict[tuple[int, int], int] = {}
    out_u = [0] * len(cap_u)
    in_v = [0] * len(cap_v)
    for node, targets in flow.items():
        if not (isinstance(node, tuple) and node[0] == "u"):
            continue
        for dst, f in targets.items():
            if f > 0 and isinstance(dst, tuple):
                pairs[(node[1], dst[1])] = f
                out_u[node[1]] += f
                in_v[dst[1]] += f

    # pair the unordered leftover mass by the northwest-corner rule
    rem_u = [c - o for c, o in zip(cap_u, out_u)]
    rem_v = [c - i for c, i in zip(cap_v, in_v)]
    a = b = 0
    while a < len(rem_u) and b < len(rem_v):
        if rem_u[a] <= 0:
            a += 1
            continue
        if rem_v[b] <= 0:
            b += 1
            continue
        f = min(rem_u[a], rem_v[b])
        pairs[(a, b)] = pairs.get((a, b), 0) + f
        rem_u[a] -= f
        rem_v[b] -= f

    keys = sorted(pairs)
    ia = np.array([k[0] for k in keys], dtype=np.int64)
    ib = np.array([k[1] for k in keys], dtype=np.int64)
    mass = np.array([pairs[k] for k in keys], dtype=np.float64) / FLOW_SCALE
    # a deficit within the rounding error (one unit per state) means dominated
    slack = len(cap_u) + len(cap_v)
    value = 1.0 if FLOW_SCALE - flow_value <= slack else flow_value / FLOW_SCALE
    plan = CouplingPlan(mu.support[ia], nu.support[ib], mass, value)
    return value, plan


# --------------------------------------------------------------------------
# conditioned systems
# --------------------------------------------------------------------------


def conditioned_pair(system: BlockSystem, n: int, cond: ConditioningSpec, level: str = "block"):
    """The two conditioned laws compared by :func:`sup_prob_exact`."""
    validate(system, cond, n).raise_if_failed()
    if level == "block":
        return (
            exact.conditional_block_law(system, "X", n, cond).pmf,
            exact.conditional_block_law(system, "Y", n, cond).pmf,
        )
    if level == "vector":
        k = cond.k(n)
        return (
            exact.full_vector_law(system.site_probs("X", n), cond.kind, k),
            exact.full_vector_law(system.site_probs("Y", n), cond.kind, k),
        )
    raise ConfigError("level must be 'block' or 'vector'")


def sup_prob_exact(
    system: BlockSystem,
    n: int,
    cond: ConditioningSpec,
    level: str = "block",
    max_edges: int = MAX_EDGES,
) -> float:
    """Exact ``sup P(X~ <= Y~)`` at finite n.

    ``level="vector"`` couples the 0/1 vectors themselves (n up to about 20);
    ``level="block"`` couples the block counts, which gives the same value
    because coordinates within a block are exchangeable.
    """
    mu, nu = conditioned_pair(system, n, cond, level)
    value, _ = max_coupling_vector(mu, nu, max_edges=max_edges)
    return value


def i_block_sup(system: BlockSystem, n: int, cond: ConditioningSpec) -> float:
    """Scalar sup for the success counts summed over the maximal-beta blocks.

    This is an upper bound for the full sup at every n and has the same limit.
    """
    I = list(betas(system).I)
    mu, nu = conditioned_pair(system, n, cond, "block")
    fx = mu.pushforward(lambda s: s[:, I].sum(axis=1))
    fy = nu.pushforward(lambda s: s[:, I].sum(axis=1))
    return max_coupling_scalar(fx, fy)


def total_variation(mu: DiscretePMF, nu: DiscretePMF) -> float:
    return mu.tv_distance(nu)


__all__ = [
    "Betas",
    "CouplingPlan",
    "betas",
    "componentwise_leq",
    "conditioned_pair",
    "i_block_sup",
    "max_coupling_scalar",
    "max_coupling_vector",
    "sup_prob_exact",
    "total_variation",
    "MAX_EDGES",
]

