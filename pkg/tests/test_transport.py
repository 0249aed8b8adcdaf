import io

import numpy as np
import pytest

import oracles
from berncond import exact
from berncond.model import BlockSystem, ConditioningSpec, DiscretePMF, InstanceTooLargeError
from berncond.transport import (
    betas,
    componentwise_leq,
    conditioned_pair,
    i_block_sup,
    max_coupling_scalar,
    max_coupling_vector,
    sup_prob_exact,
    total_variation,
)


def cond_at(n, k, kind="at_least"):
    return ConditioningSpec(kind, 0.5, table={n: k})


def example_system(p=0.3, alpha=(0.5, 0.5)):
    return BlockSystem((p, p), (p, 1 - p), alpha)


def random_pmf(rng, states, zero_frac=0.3):
    w = rng.exponential(size=len(states))
    w[rng.random(len(states)) < zero_frac] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    return DiscretePMF.from_weights(states, w)


# -- betas ------------------------------------------------------------------


def test_betas_equal_when_p_equals_q():
    b = betas(BlockSystem((0.2, 0.7), (0.2, 0.7), (0.5, 0.5)))
    assert b.beta == pytest.approx([1.0, 1.0]) and b.I == (0, 1) and b.all_equal


@pytest.mark.parametrize("p", [0.1, 0.3, 0.45])
def test_betas_example_system(p):
    b = betas(example_system(p))
    assert b.beta == pytest.approx([1.0, (p / (1 - p)) ** 2], rel=1e-14)
    assert b.beta_max == pytest.approx(1.0) and b.I == (0,)


def test_betas_unequal_pair():
    b = betas(BlockSystem((0.5, 0.5), (0.6, 0.7), (0.5, 0.5)))
    assert b.beta == pytest.approx([2 / 3, 3 / 7], rel=1e-14)
    assert b.I == (0,) and not b.all_equal


# -- scalar -----------------------------------------------------------------


def test_scalar_examples():
    F = DiscretePMF([0, 1, 2], [0.2, 0.5, 0.3])
    assert max_coupling_scalar(F, F) == 1.0
    G = DiscretePMF([1, 2, 3], [0.1, 0.5, 0.4])
    assert max_coupling_scalar(F, G) == 1.0
    assert max_coupling_scalar(DiscretePMF([1], [1.0]), DiscretePMF([0], [1.0])) == 0.0
    # reversed order: inf of F - G + 1 sits strictly inside
    assert max_coupling_scalar(G, F) == pytest.approx(0.1 - 0.7 + 1, abs=1e-15)


def test_vector_matches_scalar_on_one_dimension():
    rng = np.random.default_rng(3)
    for _ in range(60):
        m = rng.integers(2, 10)
        mu = random_pmf(rng, np.arange(m))
        nu = random_pmf(rng, np.arange(m) + rng.integers(-2, 3))
        v, _ = max_coupling_vector(mu, nu)
        assert v == pytest.approx(max_coupling_scalar(mu, nu), abs=1e-9)


# -- vector -----------------------------------------------------------------


def grid_states(side, dim):
    axes = np.meshgrid(*[np.arange(side)] * dim, indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def test_vector_identity_coupling():
    rng = np.random.default_rng(0)
    mu = random_pmf(rng, grid_states(3, 2))
    v, plan = max_coupling_vector(mu, mu)
    assert v == 1.0
    assert max(plan.marginal_errors(mu, mu)) <= 1e-9


def test_vector_agrees_with_strassen_and_lp():
    rng = np.random.default_rng(42)
    states = grid_states(3, 2)
    dominated = 0
    for trial in range(80):
        mu = random_pmf(rng, states)
        if trial % 2:
            # push mu upwards coordinatewise so that domination holds by construction
            shift = rng.integers(0, 2, size=states.shape)
            nu = mu.pushforward(lambda s: np.minimum(s + shift[: len(s)], 2))
        else:
            nu = random_pmf(rng, states)
        v, plan = max_coupling_vector(mu, nu)
        ref = oracles.upset_dual(mu.as_dict(), nu.as_dict())
        assert v == pytest.approx(ref, abs=1e-9)
        assert v == pytest.approx(oracles.transport_lp(mu.as_dict(), nu.as_dict()), abs=1e-9)
        assert (v == 1.0) == (ref >= 1 - 1e-12)
        dominated += v == 1.0
        eu, ev = plan.marginal_errors(mu, nu)
        assert max(eu, ev) <= 1e-9
        ordered = sum(m for u, w, m in zip(plan.u_states, plan.v_states, plan.mass) if np.all(u <= w))
        assert plan.value == pytest.approx(ordered, abs=1e-9)
        assert np.all(plan.mass >= 0)
    assert dominated >= 40


def test_vector_larger_supports_against_lp():
    rng = np.random.default_rng(9)
    states = grid_states(5, 2)  # 25 states a side, 50 in the union
    for _ in range(10):
        mu, nu = random_pmf(rng, states, 0.1), random_pmf(rng, states, 0.1)
        v, _ = max_coupling_vector(mu, nu)
        assert v == pytest.approx(oracles.transport_lp(mu.as_dict(), nu.as_dict()), abs=1e-9)


def test_edge_limit():
    states = grid_states(4, 2)
    mu = DiscretePMF.from_weights(states, np.ones(len(states)))
    with pytest.raises(InstanceTooLargeError, match="instance too large"):
        max_coupling_vector(mu, mu, max_edges=100)


def test_componentwise_relation():
    x = np.array([[0, 1], [1, 1]])
    y = np.array([[1, 1], [0, 2], [1, 0]])
    assert componentwise_leq(x, y).tolist() == [[True, True, False], [True, False, False]]


def test_plan_csv_export():
    mu = DiscretePMF([[0, 1], [1, 0]], [0.5, 0.5])
    nu = DiscretePMF([[1, 1]], [1.0])
    _, plan = max_coupling_vector(mu, nu)
    text = plan.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "u_state,v_state,mass"
    assert len(lines) == 3
    buf = io.StringIO()
    plan.write_csv(buf)
    assert buf.getvalue() == text


# -- conditioned pairs ------------------------------------------------------


def test_counterexample_not_dominated():
    system = BlockSystem((0.1, 0.1), (0.1, 0.9), (0.5, 0.5))
    cond = cond_at(2, 1)
    for level in ("vector", "block"):
        v = sup_prob_exact(system, 2, cond, level=level)
        assert v < 1
    mu, nu = conditioned_pair(system, 2, cond, "vector")
    assert sup_prob_exact(system, 2, cond, "vector") == pytest.approx(
        oracles.transport_lp(mu.as_dict(), nu.as_dict()), abs=1e-9
    )
    p = 0.1
    lx = mu.marginal(0).prob(1)
    ly = nu.marginal(0).prob(1)
    assert lx == pytest.approx(1 / (2 - p), abs=1e-15)
    assert ly == pytest.approx(p / (1 - (1 - p) * p), abs=1e-15)
    assert lx > ly


@pytest.mark.parametrize("k", [0, 1, 2])
def test_positive_example_dominated(k):
    system = BlockSystem((0.5, 0.5), (0.6, 0.7), (0.5, 0.5))
    assert sup_prob_exact(system, 2, cond_at(2, k), level="vector") == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("alpha, expected", [((0.5, 0.5), 0.780031037374), ((0.3, 0.7), 0.832088303187)])
def test_example_system_regression_value(alpha, expected):
    system = example_system(0.3, alpha)
    cond = ConditioningSpec("at_least", 0.3)
    v = sup_prob_exact(system, 40, cond)
    assert 0 < v < 1
    assert v == pytest.approx(expected, abs=1e-9)
    mu, nu = conditioned_pair(system, 40, cond)
    assert v == pytest.approx(oracles.transport_lp(mu.as_dict(), nu.as_dict()), abs=1e-9)
    assert v <= i_block_sup(system, 40, cond) + 1e-9


def test_block_level_equals_vector_level():
    rng = np.random.default_rng(4)
    for _ in range(8):
        p = rng.uniform(0.1, 0.8, 2)
        q = np.minimum(0.95, p + rng.uniform(0, 0.3, 2))
        system = BlockSystem(tuple(p), tuple(q), (0.5, 0.5))
        for k in range(7):
            cond = cond_at(6, k)
            assert sup_prob_exact(system, 6, cond, "block") == pytest.approx(
                sup_prob_exact(system, 6, cond, "vector"), abs=1e-9
            )


@pytest.mark.parametrize("kind", ["at_least", "exactly"])
def test_equal_betas_give_one(kind):
    beta = 0.5
    p = np.array([0.2, 0.4, 0.7])
    q = p / (p + beta * (1 - p))
    system = BlockSystem(tuple(p), tuple(q), (0.3, 0.3, 0.4))
    for n in (5, 30):
        for k in range(0, n + 1, max(1, n // 6)):
            assert sup_prob_exact(system, n, cond_at(n, k, kind)) == pytest.approx(1.0, abs=1e-9)
            if kind == "exactly":
                mu, nu = conditioned_pair(system, n, cond_at(n, k, kind))
                assert total_variation(mu, nu) <= 1e-12


def test_partial_equality_breaks_domination():
    # p == q on the first block only: the other block's larger q pulls mass away
    system = BlockSystem((0.1, 0.1), (0.1, 0.9), (0.5, 0.5))
    values = [sup_prob_exact(system, 2, cond_at(2, 1))]
    values += [sup_prob_exact(system, n, ConditioningSpec("at_least", 0.1)) for n in (10, 20)]
    assert all(v < 1 for v in values)


@pytest.mark.parametrize("n", range(1, 9))
def test_more_successes_dominate(n):
    rng = np.random.default_rng(n)
    for _ in range(25):
        p = rng.uniform(0.05, 0.95, n)
        for k in range(n):
            for kind in ("at_least", "exactly"):
                lo = exact.full_vector_law(p, kind, k)
                hi = exact.full_vector_law(p, kind, k + 1)
                v, _ = max_coupling_vector(lo, hi)
                assert v == pytest.approx(1.0, abs=1e-9)
