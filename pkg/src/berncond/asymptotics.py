"""Limit constants for conditioned block systems.

Centres ``c_i = p_i / (p_i + A (1 - p_i))`` with a common odds value A fixed
by a linear constraint, the critical fraction ``alpha_hat`` where the
maximal-beta blocks of the two vectors line up, the variances a, b, c, the
limit distribution function ``F_K`` of the scaled maximal-beta block sum and
the limit ``P_K`` of the maximal ordered-coupling probability in the critical
window.  Also the explicit finite-n concentration and tail bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from . import exact
from ._numerics import centers_from_odds, solve_common_odds
from .model import (
    BlockSystem,
    CondKind,
    ConditioningSpec,
    ConfigError,
    validate,
)
from .transport import BETA_TOL, Betas, betas

ALPHA_TOL = 1e-12
QUAD_EPSABS = 1e-12
TRUNCATE = 10.0  # standard deviations kept by the quadratures

B_ZERO_MSG = "all betas equal: F_K undefined here"


def _phi(u):
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


def _log_sf(x):
    """``log(1 - Phi(x))`` without cancellation."""
    return log_ndtr(-np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# centre systems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CenterSolution:
    """Solution of ``sum_i w_i p_i / (p_i + A (1-p_i)) = target``."""

    A: float
    c: tuple[float, ...]
    weights: tuple[float, ...]
    target: float
    context: str  # "limit" (weights alpha) or "finite" (weights m_in)

    @property
    def residual(self) -> float:
        return abs(math.fsum(ci * wi for ci, wi in zip(self.c, self.weights)) - self.target)

    def to_json(self) -> dict:
        return {"A": self.A, "c": list(self.c), "target": self.target, "context": self.context}


def solve_centers(probs: Sequence[float], weights: Sequence[float], target: float, context: str = "limit") -> CenterSolution:
    A = solve_common_odds(probs, weights, target)
    c = centers_from_odds(A, probs)
    return CenterSolution(A, tuple(float(v) for v in c), tuple(float(w) for w in weights), float(target), context)


def _solve_side(system: BlockSystem, side: str, alpha, n, k) -> CenterSolution:
    probs = system.probs(side)
    if n is None:
        if alpha is None:
            raise ConfigError("give alpha (limit system) or n and k (finite system)")
        return solve_centers(probs, system.alpha, alpha, "limit")
    if k is None:
        raise ConfigError("k is required with n")
    return solve_centers(probs, system.sizes(n), k, "finite")


def solve_a(system: BlockSystem, alpha: float | None = None, *, n: int | None = None, k: float | None = None) -> CenterSolution:
    """Centres of the X side: limit system at ``alpha`` or finite system at ``(n, k)``."""
    return _solve_side(system, "X", alpha, n, k)


def solve_d(system: BlockSystem, alpha: float | None = None, *, n: int | None = None, k: float | None = None) -> CenterSolution:
    """Same system with ``q`` in place of ``p``."""
    return _solve_side(system, "Y", alpha, n, k)


# --------------------------------------------------------------------------
# critical fraction and variances
# --------------------------------------------------------------------------


def alpha_hat(system: BlockSystem) -> float:
    bmax = betas(system).beta_max
    return math.fsum(p * a / (p + bmax * (1.0 - p)) for p, a in zip(system.p, system.alpha))


def k_hat(system: BlockSystem, n: int) -> float:
    bmax = betas(system).beta_max
    return math.fsum(p * m / (p + bmax * (1.0 - p)) for p, m in zip(system.p, system.sizes(n)))


def hat_quantities(system: BlockSystem) -> tuple[float, Callable[[int], float]]:
    """``(alpha_hat, n -> k_hat(n))``."""
    return alpha_hat(system), lambda n: k_hat(system, n)


@dataclass(frozen=True)
class ABC:
    a: float
    b: float
    c: float
    a2: float
    b2: float
    c2: float
    a2_alt: float  # a^2 written through q instead of p and beta_max

    @property
    def b_is_zero(self) -> bool:
        return self.b2 == 0.0

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "a2": self.a2, "b2": self.b2, "c2": self.c2}


def abc_constants(system: BlockSystem) -> ABC:
    bt = betas(system)
    bmax = bt.beta_max
    I = set(bt.I)
    terms = [bmax * p * (1 - p) * a / (p + bmax * (1 - p)) ** 2 for p, a in zip(system.p, system.alpha)]
    a2 = math.fsum(t for i, t in enumerate(terms) if i in I)
    b2 = math.fsum(t for i, t in enumerate(terms) if i not in I)
    a2_alt = math.fsum(system.q[i] * (1 - system.q[i]) * system.alpha[i] for i in sorted(I))
    c2 = a2 + b2
    return ABC(math.sqrt(a2), math.sqrt(b2), math.sqrt(c2), a2, b2, c2, a2_alt)


def _require_b(abc: ABC) -> None:
    if abc.b_is_zero:
        raise ConfigError(B_ZERO_MSG)


def at_mean_case(system: BlockSystem) -> bool:
    """True when ``alpha_hat == sum p_i alpha_i``, i.e. ``beta_max == 1``."""
    return abs(betas(system).beta_max - 1.0) <= BETA_TOL


def z_k(system: BlockSystem, K: float) -> float:
    """Limit shift of the scaled maximal-beta block sum, with centres solved at ``alpha_hat``."""
    if K == 0:
        return 0.0
    sol = solve_a(system, alpha_hat(system))
    c = np.array(sol.c)
    s2 = c * (1 - c) * np.array(system.alpha)
    I = list(betas(system).I)
    return float(s2[I].sum() / s2.sum()) * K


# --------------------------------------------------------------------------
# F_K and P_K
# --------------------------------------------------------------------------


def _halfspace_density(u, a: float, b: float, K: float):
    """Density of ``U`` given ``a U + b V >= K`` for independent standard normals ``U, V``."""
    c = math.hypot(a, b)
    return _phi(u) * np.exp(_log_sf((K - a * np.asarray(u)) / b) - _log_sf(K / c))


def _halfspace_window(a: float, b: float, K: float) -> tuple[float, float, float]:
    """Integration window ``(lo, mode, hi)`` for :func:`_halfspace_density`."""
    c = math.hypot(a, b)
    t = K / c
    # conditional mean of a standard normal given it exceeds t, mapped to u
    shift = (a / c) * (math.exp(-0.5 * t * t - float(log_ndtr(-t))) / math.sqrt(2 * math.pi))
    return min(-TRUNCATE, shift - TRUNCATE - 2.0), shift, max(TRUNCATE, shift + TRUNCATE + 2.0)


def halfspace_cdf(z, a: float, b: float, K: float) -> np.ndarray:
    """CDF at ``z`` of ``a U`` where ``(U, V)`` are standard normals given ``a U + b V >= K``.

    ``K = -inf`` removes the conditioning.  Vectorized: points are sorted
    and the quadrature is accumulated over consecutive gaps.
    """
    z = np.asarray(z, dtype=np.float64)
    flat = z.reshape(-1)
    if K == -math.inf:
        return ndtr(flat / a).reshape(z.shape)
    if K == math.inf:
        return np.zeros(z.shape)
    lo, mode, hi = _halfspace_window(a, b, K)
    order = np.argsort(flat)
    ends = np.clip(flat[order] / a, lo, hi)
    out = np.empty(flat.size)
    acc, prev = 0.0, lo
    for idx, end in zip(order, ends):
        if end > prev:
            pts = [mode] if prev < mode < end else None
            part, _ = integrate.quad(
                _halfspace_density, prev, end, args=(a, b, K), epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200, points=pts
            )
            acc += part
            prev = end
        out[idx] = min(1.0, max(0.0, acc))
    return out.reshape(z.shape)


def f_k(system: BlockSystem, K: float, z):
    """Limit CDF of ``sum_{i in I} (X~_in - q_i m_in) / sqrt(n)`` in the critical window."""
    abc = abc_constants(system)
    _require_b(abc)
    z_arr = np.asarray(z, dtype=np.float64)
    if K == math.inf:
        out = np.zeros(z_arr.shape)
    elif at_mean_case(system):
        out = halfspace_cdf(z_arr, abc.a, abc.b, K)
    elif K == -math.inf:
        out = np.ones(z_arr.shape)
    else:
        mean = abc.a2 * K / abc.c2
        out = ndtr((abc.c / (abc.a * abc.b)) * (z_arr - mean))
    return float(out) if np.ndim(out) == 0 else out


def z_min(system: BlockSystem, K: float) -> float:
    """Minimizer of ``F_K(z) - Phi(z/a)`` for finite K."""
    abc = abc_constants(system)
    _require_b(abc)
    if at_mean_case(system):
        return K - abc.b * K / abc.c
    return K - (abc.b / abc.c) * _r_k(abc, K)


def _r_k(abc: ABC, K: float) -> float:
    return math.sqrt(K * K + abc.c2 * math.log(abc.c2 / abc.b2))


def p_k(system: BlockSystem, K: float) -> float:
    """Limit of the maximal ordered-coupling probability in the critical window."""
    abc = abc_constants(system)
    _require_b(abc)
    if K == -math.inf:
        return 1.0
    if K == math.inf:
        return 0.0
    a, b, c = abc.a, abc.b, abc.c
    if at_mean_case(system):
        upper = (c - b) * K / (a * c)
        lower = min(-TRUNCATE, upper - TRUNCATE)
        log_tail = _log_sf(K / c)

        def gap(u):
            # (Phi((K-au)/b) - Phi(K/c)) / (1 - Phi(K/c)), nonnegative below `upper`
            return _phi(u) * -np.expm1(_log_sf((K - a * u) / b) - log_tail)

        val, _ = integrate.quad(gap, lower, upper, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)
        return float(min(1.0, max(0.0, 1.0 - val)))
    r = _r_k(abc, K)
    return float(ndtr(b * K / (a * c) - r / a) + ndtr(-K / a + b * r / (a * c)))


def p_k_via_inf(system: BlockSystem, K: float) -> float:
    """``F_K(z) - Phi(z/a) + 1`` evaluated at the stationary point ``z_min``."""
    if K in (math.inf, -math.inf):
        return p_k(system, K)
    abc = abc_constants(system)
    z = z_min(system, K)
    return float(f_k(system, K, z) - ndtr(z / abc.a) + 1.0)


def pk_curve(system: BlockSystem, Ks: Sequence[float]) -> np.ndarray:
    return np.array([p_k(system, float(K)) for K in Ks])


# --------------------------------------------------------------------------
# regime classification
# --------------------------------------------------------------------------

REGIMES = ("AllBetaEqual", "Subcritical", "Critical", "Supercritical")


@dataclass(frozen=True)
class AsymptoticReport:
    betas: Betas
    alpha: float
    alpha_hat: float
    sum_p_alpha: float
    sum_q_alpha: float
    regime: str
    K: float | None
    abc: ABC
    z_K: float | None
    P: float
    centers: CenterSolution
    d_solution: CenterSolution
    center_order: tuple[str, ...] = field(default=())
    system: BlockSystem | None = field(default=None, compare=False, repr=False)

    @property
    def label(self) -> str:
        return f"Critical({self.K:g})" if self.regime == "Critical" else self.regime

    def k_hat(self, n: int) -> float:
        if self.system is None:
            raise ConfigError("report has no system attached")
        return k_hat(self.system, n)

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "label": self.label,
            "K": self.K,
            "alpha": self.alpha,
            "alpha_hat": self.alpha_hat,
            "sum_p_alpha": self.sum_p_alpha,
            "sum_q_alpha": self.sum_q_alpha,
            "betas": self.betas.to_json(),
            "abc": self.abc.to_json(),
            "z_K": self.z_K,
            "P": self.P,
            "centers": self.centers.to_json(),
            "d_solution": self.d_solution.to_json(),
            "center_vs_q": list(self.center_order),
        }


def _cmp(x: float, y: float, tol: float = 1e-10) -> str:
    return "=" if abs(x - y) <= tol else ("<" if x < y else ">")


def classify_regime(system: BlockSystem, cond: ConditioningSpec) -> AsymptoticReport:
    """Limit of ``sup P(X~_n <= Y~_n)`` for ``{sum >= k_n}`` with ``k_n = alpha n + K sqrt(n)``.

    The sign of ``alpha - alpha_hat`` decides the regime; at equality the
    shift coefficient K gives the limit ``P_K``.
    """
    validate(system, cond).raise_if_failed()
    if cond.kind is not CondKind.AT_LEAST:
        raise ConfigError("classification requires at-least conditioning")
    if not cond.is_parametric:
        raise ConfigError("cannot classify divergence")
    bt = betas(system)
    ah = alpha_hat(system)
    abc = abc_constants(system)
    sp = math.fsum(p * a for p, a in zip(system.p, system.alpha))
    sq = math.fsum(q * a for q, a in zip(system.q, system.alpha))
    alpha = cond.alpha
    centers = solve_a(system, alpha)
    d_sol = solve_d(system, alpha)
    order = tuple(_cmp(ci, qi) for ci, qi in zip(centers.c, system.q))
    K = None
    zk = None
    if bt.all_equal:
        regime, P = "AllBetaEqual", 1.0
    elif alpha < ah - ALPHA_TOL:
        regime, P = "Subcritical", 1.0
    elif alpha > ah + ALPHA_TOL:
        regime, P = "Supercritical", 0.0
    else:
        regime, K = "Critical", cond.K
        P = p_k(system, K)
        zk = z_k(system, K)
    return AsymptoticReport(bt, alpha, ah, sp, sq, regime, K, abc, zk, P, centers, d_sol, order, system)


# --------------------------------------------------------------------------
# shifted centres and finite-n bounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftedCenters:
    c: tuple[float, ...]
    c_shift: tuple[float, ...]
    first_order: tuple[float, ...]
    d: float
    error: tuple[float, ...]
    bound_applies: bool
    bound_holds: bool | None


def shifted_centers(system: BlockSystem, n: int, k: float, ell: float, slack: float = 1e-12) -> ShiftedCenters:
    """Centres for ``k + ell`` successes against the first-order shift ``c + c(1-c) d``.

    The error of the first-order formula is at most ``d**2`` when ``|d| <= 1/2``.
    """
    base = solve_a(system, n=n, k=k)
    moved = solve_a(system, n=n, k=k + ell)
    c = np.array(base.c)
    m = np.array(system.sizes(n), dtype=float)
    s = c * (1 - c)
    d = float(ell / np.dot(s, m))
    first = c + s * d
    err = np.array(moved.c) - first
    applies = abs(d) <= 0.5
    holds = bool(np.all(np.abs(err) <= d * d * (1 + slack) + slack)) if applies else None
    return ShiftedCenters(base.c, moved.c, tuple(first.tolist()), d, tuple(err.tolist()), applies, holds)


def center_shift_limit(system: BlockSystem, alpha: float, K: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(c_in - c_i) m_in / sqrt(n)`` along ``k_n = sum c_i m_in + K sqrt(n)`` and its limit."""
    lim = solve_a(system, alpha)
    c = np.array(lim.c)
    m = np.array(system.sizes(n), dtype=float)
    k = float(np.dot(c, m) + K * math.sqrt(n))
    fin = np.array(solve_a(system, n=n, k=k).c)
    s2 = c * (1 - c) * np.array(system.alpha)
    return (fin - c) * m / math.sqrt(n), s2 / s2.sum() * K


def _exact_cond(n: int, k: int) -> ConditioningSpec:
    return ConditioningSpec(CondKind.EXACTLY, 0.5, 0.0, table={n: int(k)})


def concentration_bound(system: BlockSystem, n: int, k: int, i: int, r: float) -> tuple[float, float]:
    """``(2M exp(-(M-1) r^2 / n), P(|X_in - c_in m_in| >= M r | sum == k))`` from the exact law."""
    M = system.M
    sol = solve_a(system, n=n, k=k)
    centre = sol.c[i] * system.sizes(n)[i]
    law = exact.block_marginals(system, "X", n, _exact_cond(n, k))[i]
    far = np.abs(law.support - centre) >= M * r
    lhs = math.fsum(law.probs[far].tolist())
    return 2 * M * math.exp(-(M - 1) * r * r / n), lhs


def tail_bound(system: BlockSystem, n: int, k: int, s: int) -> tuple[float, float]:
    """``(P(sum >= k + 2Ms), M exp(-(k - E sum + Ms) s / (Mn)) P(sum >= k))`` from the exact law."""
    M = system.M
    law = exact.block_sum_law(system, "X", n)
    tail = np.concatenate([np.cumsum(law.probs[::-1])[::-1], [0.0]])
    mean = float(np.dot(system.p, system.sizes(n)))
    lhs = float(tail[min(k + 2 * M * s, n + 1)])
    rhs = M * math.exp(-(k - mean + M * s) * s / (M * n)) * float(tail[k])
    return lhs, rhs


# --------------------------------------------------------------------------
# per-block limit marginals
# --------------------------------------------------------------------------


def singular_marginal_variance(sigma2: Sequence[float], i: int) -> float:
    """Variance of coordinate i of the centred normal law restricted to ``sum z = 0``."""
    s = np.asarray(sigma2, dtype=float)
    return float(s[i] * (s.sum() - s[i]) / s.sum())


__all__ = [
    "ABC",
    "AsymptoticReport",
    "CenterSolution",
    "ShiftedCenters",
    "abc_constants",
    "alpha_hat",
    "at_mean_case",
    "center_shift_limit",
    "classify_regime",
    "concentration_bound",
    "f_k",
    "halfspace_cdf",
    "hat_quantities",
    "k_hat",
    "p_k",
    "p_k_via_inf",
    "pk_curve",
    "shifted_centers",
    "singular_marginal_variance",
    "solve_a",
    "solve_centers",
    "solve_d",
    "tail_bound",
    "z_k",
    "z_min",
]
