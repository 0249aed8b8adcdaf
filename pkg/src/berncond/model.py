"""Block systems, conditioning rules and finite discrete distributions.

A block system describes two Bernoulli vectors X and Y of length n that are
split into M blocks; every coordinate in block i succeeds with probability
``p[i]`` (for X) or ``q[i]`` (for Y).  Block sizes ``m_in`` follow a size
rule whose fractions tend to ``alpha[i]``.  A conditioning spec describes the
event ``{sum == k_n}`` or ``{sum >= k_n}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np

PMF_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


class BerncondError(Exception):
    """Base class for library errors."""


class ConfigError(BerncondError, ValueError):
    """Invalid parameters or configuration."""


class InfeasibleError(BerncondError, ValueError):
    """The requested quantity does not exist for these parameters."""


class InstanceTooLargeError(BerncondError):
    """An exact computation would exceed the configured size limit."""


# --------------------------------------------------------------------------
# discrete distributions
# --------------------------------------------------------------------------


class DiscretePMF:
    """Finite distribution on integers or on integer vectors of fixed length.

    ``support`` is stored as an int64 array of shape ``(k,)`` (scalar states)
    or ``(k, d)`` (vector states); ``probs`` has shape ``(k,)``.  Both arrays
    are read-only.
    """

    __slots__ = ("support", "probs")

    def __init__(self, support, probs, *, drop_zeros: bool = False):
        sup = np.asarray(support, dtype=np.int64)
        pr = np.asarray(probs, dtype=np.float64).reshape(-1)
        if sup.ndim not in (1, 2):
            raise ConfigError("support must be a list of integers or of integer vectors")
        if sup.shape[0] != pr.shape[0]:
            raise ConfigError("support and probs have different lengths")
        if pr.size == 0:
            raise ConfigError("empty distribution")
        if not np.all(np.isfinite(pr)):
            raise ConfigError("non-finite probability")
        if np.any(pr < 0):
            raise ConfigError("negative probability")
        total = math.fsum(pr.tolist())
        dev = abs(total - 1.0)
        if dev > RENORMALIZE_TOL:
            raise ConfigError(f"probabilities sum to {total!r}, not 1")
        if dev > 0:
            pr = pr / total
        if drop_zeros:
            keep = pr > 0
            sup, pr = sup[keep], pr[keep]
        uniq = np.unique(sup, axis=0)
        if uniq.shape[0] != sup.shape[0]:
            raise ConfigError("support entries are not unique")
        sup = np.ascontiguousarray(sup)
        pr = np.ascontiguousarray(pr)
        sup.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)

    def __setattr__(self, name, value):
        raise AttributeError("DiscretePMF is immutable")

    @classmethod
    def from_weights(cls, support, weights, *, drop_zeros: bool = True) -> "DiscretePMF":
        """Normalize nonnegative weights into a distribution."""
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise ConfigError("negative weight")
        total = w.sum()
        if not total > 0:
            raise InfeasibleError("impossible condition")
        return cls(support, w / total, drop_zeros=drop_zeros)

    @classmethod
    def from_dict(cls, mapping: Mapping[Any, float]) -> "DiscretePMF":
        keys = list(mapping)
        return cls(keys, [mapping[k] for k in keys])

    # -- basic views -----------------------------------------------------

    @property
    def dim(self) -> int:
        """0 for scalar states, d for vectors of length d."""
        return 0 if self.support.ndim == 1 else self.support.shape[1]

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __repr__(self) -> str:
        return f"DiscretePMF(size={len(self)}, dim={self.dim})"

    def as_dict(self) -> dict:
        if self.dim == 0:
            keys = [int(s) for s in self.support]
        else:
            keys = [tuple(int(v) for v in row) for row in self.support]
        return dict(zip(keys, self.probs.tolist()))

    def prob(self, state) -> float:
        s = np.asarray(state, dtype=np.int64)
        if self.dim == 0:
            hit = self.support == s
        else:
            hit = np.all(self.support == s, axis=1)
        idx = np.flatnonzero(hit)
        return float(self.probs[idx[0]]) if idx.size else 0.0

    def mean(self):
        if self.dim == 0:
            return float(np.dot(self.probs, self.support))
        return self.probs @ self.support

    def sorted(self) -> "DiscretePMF":
        """Same law with support in (lexicographic) increasing order."""
        if self.dim == 0:
            order = np.argsort(self.support, kind="stable")
        else:
            order = np.lexsort(self.support.T[::-1])
        return DiscretePMF(self.support[order], self.probs[order])

    def cdf(self, z):
        """Distribution function ``P(S <= z)`` of a scalar law."""
        if self.dim != 0:
            raise ConfigError("cdf is defined for scalar laws only")
        law = self.sorted()
        cum = np.cumsum(law.probs)
        idx = np.searchsorted(law.support, np.asarray(z, dtype=np.float64), side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return np.minimum(out, 1.0)

    def marginal(self, i: int) -> "DiscretePMF":
        if self.dim == 0:
            raise ConfigError("marginal of a scalar law")
        vals, inv = np.unique(self.support[:, i], return_inverse=True)
        return DiscretePMF(vals, np.bincount(inv.reshape(-1), weights=self.probs))

    def pushforward(self, fn: Callable[[np.ndarray], np.ndarray]) -> "DiscretePMF":
        """Law of ``fn(S)``; ``fn`` maps the support array to new states."""
        new = np.asarray(fn(self.support), dtype=np.int64)
        vals, inv = np.unique(new, axis=0, return_inverse=True)
        return DiscretePMF(vals, np.bincount(inv.reshape(-1), weights=self.probs))

    def tv_distance(self, other: "DiscretePMF") -> float:
        a, b = self.as_dict(), other.as_dict()
        keys = set(a) | set(b)
        return 0.5 * math.fsum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


# --------------------------------------------------------------------------
# size rules
# --------------------------------------------------------------------------


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(quotas).astype(np.int64)
    left = int(total - base.sum())
    if left > 0:
        rem = quotas - base
        # stable sort on -rem: ties go to the lower index
        order = np.argsort(-rem, kind="stable")
        base[order[:left]] += 1
    return base


@dataclass(frozen=True)
class LargestRemainderRule:
    """Apportion n into parts proportional to ``alpha`` (Hamilton's method).

    Ties between equal remainders go to the lower block index.  If plain
    apportionment would leave a block empty, every block first receives one
    coordinate and the remaining ``n - M`` are apportioned.
    """

    alpha: tuple[float, ...]

    def __call__(self, n: int) -> tuple[int, ...]:
        M = len(self.alpha)
        if n < M:
            raise ConfigError("blocks cannot be empty")
        a = np.asarray(self.alpha, dtype=np.float64)
        parts = _largest_remainder(a * n, n)
        if np.any(parts == 0):
            parts = 1 + _largest_remainder(a * (n - M), n - M)
        return tuple(int(v) for v in parts)

    def to_json(self):
        return "largest_remainder"


@dataclass(frozen=True)
class TableSizeRule:
    """Explicit block sizes for a finite set of n."""

    table: Mapping[int, tuple[int, ...]]

    def __call__(self, n: int) -> tuple[int, ...]:
        try:
            return tuple(int(v) for v in self.table[n])
        except KeyError:
            raise ConfigError(f"no block sizes tabulated for n={n}") from None

    def to_json(self):
        return {str(k): list(v) for k, v in sorted(self.table.items())}


def default_size_rule(alpha: Sequence[float]) -> LargestRemainderRule:
    return LargestRemainderRule(tuple(float(a) for a in alpha))


# --------------------------------------------------------------------------
# block systems and conditioning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockSystem:
    """Per-block success probabilities of X (``p``) and Y (``q``).

    ``size_rule`` maps n to the block sizes; it defaults to largest-remainder
    apportionment of ``alpha``.
    """

    p: tuple[float, ...]
    q: tuple[float, ...]
    alpha: tuple[float, ...]
    size_rule: Callable[[int], tuple[int, ...]] | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("p", "q", "alpha"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.p) == len(self.q) == len(self.alpha)) or not self.p:
            raise ConfigError("p, q and alpha must be nonempty lists of equal length M")
        if self.size_rule is None:
            object.__setattr__(self, "size_rule", default_size_rule(self.alpha))

    @property
    def M(self) -> int:
        return len(self.p)

    def sizes(self, n: int) -> tuple[int, ...]:
        return tuple(self.size_rule(n))

    def probs(self, side: str) -> np.ndarray:
        side = check_side(side)
        return np.array(self.p if side == "X" else self.q)

    def site_probs(self, side: str, n: int) -> np.ndarray:
        """Per-coordinate success probabilities of the length-n vector."""
        return np.repeat(self.probs(side), self.sizes(n))


def check_side(side: str) -> str:
    s = str(side).upper()
    if s not in ("X", "Y"):
        raise ConfigError(f"side must be 'X' or 'Y', got {side!r}")
    return s


class CondKind(str, Enum):
    AT_LEAST = "at_least"
    EXACTLY = "exactly"


@dataclass(frozen=True)
class ConditioningSpec:
    """The event ``{sum >= k_n}`` or ``{sum == k_n}``.

    With no table, ``k_n = floor(alpha*n + K*sqrt(n) + 1/2)`` clamped to
    ``[0, n]``.  A table, when given, takes precedence for the n it lists.
    """

    kind: CondKind = CondKind.AT_LEAST
    alpha: float = 0.5
    K: float = 0.0
    table: Mapping[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CondKind(self.kind))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "K", float(self.K))

    @property
    def is_parametric(self) -> bool:
        return self.table is None

    def k(self, n: int) -> int:
        if self.table is not None:
            try:
                return int(self.table[n])
            except KeyError:
                raise ConfigError(f"no k_n tabulated for n={n}") from None
        raw = math.floor(self.alpha * n + self.K * math.sqrt(n) + 0.5)
        return int(min(max(raw, 0), n))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.message or c.name for c in self.checks if not c.passed]

    def raise_if_failed(self):
        if not self.ok:
            raise ConfigError("; ".join(self.failures))


def validate(system: BlockSystem, cond: ConditioningSpec | None = None, n: int | None = None) -> ValidationReport:
    """Check the standing assumptions for ``system`` (and ``cond`` at ``n``)."""
    checks = []
    p, q, a = np.array(system.p), np.array(system.q), np.array(system.alpha)
    checks.append(Check("p range", bool(np.all((p > 0) & (p < 1))), "p must lie in (0,1)"))
    checks.append(Check("q range", bool(np.all((q > 0) & (q < 1))), "q must lie in (0,1)"))
    checks.append(Check("p <= q", bool(np.all(p <= q)), "p ≤ q violated"))
    alpha_ok = bool(np.all((a > 0) & (a <= 1)) and (system.M == 1 or np.all(a < 1)))
    checks.append(Check("alpha range", alpha_ok, "alpha must lie in (0,1)"))
    checks.append(Check("alpha sum", abs(math.fsum(a) - 1.0) <= 1e-12, "alpha must sum to 1"))

    if n is not None:
        try:
            m = np.array(system.sizes(n), dtype=np.int64)
            sizes_ok = m.shape == (system.M,) and bool(np.all(m > 0)) and int(m.sum()) == n
            msg = "block sizes must be positive and sum to n"
            if sizes_ok:
                close = bool(np.all(np.abs(m / n - a) <= system.M / n))
                checks.append(Check("block sizes", close, "block sizes far from alpha*n"))
            else:
                checks.append(Check("block sizes", False, msg))
        except ConfigError as exc:
            checks.append(Check("block sizes", False, str(exc)))

    if cond is not None:
        checks.append(Check("cond alpha", 0 < cond.alpha < 1, "conditioning alpha must lie in (0,1)"))
        if n is not None:
            try:
                k = cond.k(n)
                checks.append(Check("k_n range", 0 <= k <= n, "k_n range"))
                if cond.is_parametric:
                    slack = abs(cond.K) * math.sqrt(n) + 1.0
                    checks.append(Check("k_n rate", abs(k - cond.alpha * n) <= slack, "k_n/n far from alpha"))
            except ConfigError as exc:
                checks.append(Check("k_n range", False, str(exc)))
    return ValidationReport(tuple(checks))


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

SYSTEM_KEYS = {"M", "p", "q", "alpha", "size_rule", "cond_kind", "alpha_cond", "K_shift", "k_table"}


def to_json_dict(system: BlockSystem, cond: ConditioningSpec | None = None) -> dict:
    rule = system.size_rule
    out = {
        "M": system.M,
        "p": list(system.p),
        "q": list(system.q),
        "alpha": list(system.alpha),
        "size_rule": rule.to_json() if hasattr(rule, "to_json") else "largest_remainder",
    }
    if cond is not None:
        out["cond_kind"] = cond.kind.value
        out["alpha_cond"] = cond.alpha
        out["K_shift"] = cond.K
        if cond.table is not None:
            out["k_table"] = {str(k): int(v) for k, v in sorted(cond.table.items())}
    return out


def from_json_dict(doc: Mapping[str, Any]) -> tuple[BlockSystem, ConditioningSpec | None]:
    """Parse the document written by :func:`to_json_dict`.

    Unknown keys are rejected.
    """
    unknown = set(doc) - SYSTEM_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    for key in ("p", "q", "alpha"):
        if key not in doc:
            raise ConfigError(f"missing key {key!r}")
    try:
        rule_doc = doc.get("size_rule", "largest_remainder")
        if rule_doc == "largest_remainder":
            rule = None
        elif isinstance(rule_doc, Mapping):
            rule = TableSizeRule({int(k): tuple(int(x) for x in v) for k, v in rule_doc.items()})
        else:
            raise ConfigError(f"unknown size_rule {rule_doc!r}")
        system = BlockSystem(doc["p"], doc["q"], doc["alpha"], rule)
        if "M" in doc and int(doc["M"]) != system.M:
            raise ConfigError("M does not match the length of p")
        cond = None
        if "cond_kind" in doc or "alpha_cond" in doc:
            table = doc.get("k_table")
            cond = ConditioningSpec(
                kind=CondKind(doc.get("cond_kind", "at_least")),
                alpha=float(doc["alpha_cond"]),
                K=float(doc.get("K_shift", 0.0)),
                table=None if table is None else {int(k): int(v) for k, v in table.items()},
            )
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return system, cond


def dumps(system: BlockSystem, cond: ConditioningSpec | None = None) -> str:
    return json.dumps(to_json_dict(system, cond), indent=2, sort_keys=True)


def loads(text: str) -> tuple[BlockSystem, ConditioningSpec | None]:
    return from_json_dict(json.loads(text))
