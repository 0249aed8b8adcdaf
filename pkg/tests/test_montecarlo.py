import io

import numpy as np
import pytest

from helpers import frequencies, within_bands
from berncond import exact
from berncond import montecarlo as mc
from berncond.model import BlockSystem, ConditioningSpec, ConfigError
from berncond.transport import i_block_sup, sup_prob_exact


def cond_at(n, k, kind="at_least"):
    return ConditioningSpec(kind, 0.5, table={n: k})


def example_system(p=0.3, alpha=(0.5, 0.5)):
    return BlockSystem((p, p), (p, 1 - p), alpha)


SMALL = [
    (BlockSystem((0.3, 0.6), (0.4, 0.7), (0.5, 0.5)), 8, 5, "at_least", "X"),
    (BlockSystem((0.3, 0.6), (0.4, 0.7), (0.5, 0.5)), 10, 4, "exactly", "Y"),
    (BlockSystem((0.2, 0.5, 0.7), (0.3, 0.5, 0.8), (0.3, 0.3, 0.4)), 12, 7, "at_least", "Y"),
    (BlockSystem((0.2, 0.5, 0.7), (0.3, 0.5, 0.8), (0.3, 0.3, 0.4)), 9, 3, "exactly", "X"),
]


@pytest.mark.parametrize("system, n, k, kind, side", SMALL)
def test_sampler_matches_exact_law(system, n, k, kind, side):
    draws = 1_000_000
    cond = cond_at(n, k, kind)
    batch = mc.sample_conditioned(system, side, n, cond, draws, seed=17)
    assert batch.counts.shape == (draws, system.M)
    assert np.all(batch.counts >= 0) and np.all(batch.counts <= np.array(batch.sizes))
    tot = batch.totals()
    assert np.all(tot == k) if kind == "exactly" else np.all(tot >= k)
    law = exact.conditional_block_law(system, side, n, cond).pmf
    assert within_bands(frequencies(batch.counts), law.as_dict(), draws, 4)


def test_single_block_exactly_is_constant():
    batch = mc.sample_conditioned(BlockSystem((0.3,), (0.4,), (1.0,)), "X", 50, cond_at(50, 17, "exactly"), 1000, 0)
    assert np.all(batch.counts == 17)


def test_void_conditioning_keeps_mean():
    system = BlockSystem((0.3, 0.6), (0.4, 0.7), (0.5, 0.5))
    n = 2000
    batch = mc.sample_conditioned(system, "X", n, cond_at(n, 100), 20_000, 1)
    mean = float(np.dot(system.p, system.sizes(n)))
    sd = np.sqrt(np.dot(np.array(system.p) * (1 - np.array(system.p)), system.sizes(n)))
    assert abs(batch.totals().mean() - mean) < 4 * sd / np.sqrt(20_000)


def test_determinism_and_worker_independence():
    system = example_system()
    cond = ConditioningSpec("at_least", 0.3)
    a = mc.sample_conditioned(system, "X", 5000, cond, 30_000, seed=5, chunk_size=4096, workers=1)
    b = mc.sample_conditioned(system, "X", 5000, cond, 30_000, seed=5, chunk_size=4096, workers=4)
    c = mc.sample_conditioned(system, "X", 5000, cond, 30_000, seed=6, chunk_size=4096, workers=4)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)
    fa, fb = io.StringIO(), io.StringIO()
    a.write_csv(fa)
    b.write_csv(fb)
    assert fa.getvalue() == fb.getvalue()


# -- laws of large numbers --------------------------------------------------


def test_lln_below_mean_shrinks():
    system = BlockSystem((0.3, 0.6), (0.4, 0.7), (0.5, 0.5))
    rows = mc.lln_check(system, "X", [200, 20_000], ConditioningSpec("at_least", 0.3), size=5000, seed=2)
    assert sorted({round(r["limit"], 12) for r in rows}) == pytest.approx([0.15, 0.3])
    by_n = {}
    for r in rows:
        if r["eps"] == 0.02:
            by_n.setdefault(r["n"], []).append(r["prob"])
    assert max(by_n[20_000]) < 0.01 and max(by_n[200]) > max(by_n[20_000])


def test_lln_example_target_and_boundary():
    system = example_system()
    assert mc.lln_targets(system, "X", ConditioningSpec("at_least", 0.3)) == pytest.approx([0.15, 0.15])
    above = mc.lln_targets(system, "X", ConditioningSpec("at_least", 0.4))
    assert above.sum() == pytest.approx(0.4, abs=1e-12)
    rows = mc.lln_check(system, "X", [50_000], ConditioningSpec("at_least", 0.4), size=3000, seed=3)
    assert all(r["prob"] == 0.0 for r in rows if r["eps"] == 0.01)


# -- weak limits ------------------------------------------------------------


def test_ks_distance_basics():
    from scipy.stats import norm

    rng = np.random.default_rng(0)
    assert mc.ks_distance(rng.standard_normal(50_000), norm.cdf) < 0.01
    assert mc.ks_distance(np.zeros(10), norm.cdf) == pytest.approx(0.5)


@pytest.mark.parametrize("side", ["X", "Y"])
def test_sum_over_i_ks_decreases(side):
    rows = mc.weak_limit_check(example_system(), [1000, 100_000], ConditioningSpec("at_least", 0.3),
                               side=side, size=50_000, seed=4)
    small, large = rows[0]["ks"], rows[1]["ks"]
    assert large < small and large < 0.02


@pytest.mark.parametrize("alpha", [0.2, 0.3, 0.4])
def test_per_block_limits(alpha):
    system = BlockSystem((0.3, 0.6), (0.4, 0.7), (0.5, 0.5))
    rows = mc.weak_limit_check(system, [50_000], ConditioningSpec("at_least", alpha), functional="per-block",
                               size=20_000, seed=6)
    assert all(r["ks"] < 0.03 for r in rows)


def test_weak_limit_errors():
    system = example_system()
    with pytest.raises(ConfigError):
        mc.weak_limit_check(system, [100], ConditioningSpec("at_least", 0.2), side="X")
    with pytest.raises(ConfigError):
        mc.weak_limit_check(system, [100], ConditioningSpec("at_least", 0.3), functional="bogus")


# -- maximal ordered coupling estimates -------------------------------------


def test_sup_estimate_equal_betas_exact():
    p = np.array([0.2, 0.5])
    q = p / (p + 0.5 * (1 - p))
    est = mc.sup_prob_estimate(BlockSystem(tuple(p), tuple(q), (0.5, 0.5)), 100, ConditioningSpec("at_least", 0.4), 100, 0)
    assert est.exact and est.estimate == 1.0


def test_sup_estimate_small_n_against_exact():
    system = example_system()
    cond = ConditioningSpec("at_least", 0.3)
    n = 30
    est = mc.sup_prob_estimate(system, n, cond, size=200_000, seed=9, n_boot=300)
    target = i_block_sup(system, n, cond)
    assert est.ci_low <= target <= est.ci_high
    assert sup_prob_exact(system, n, cond) <= target + 1e-9
    assert est.lower_bracket <= est.estimate <= est.upper_bracket + 1e-12


def test_sup_estimate_regimes_and_reproducibility():
    system = example_system()
    sub = mc.sup_prob_estimate(system, 10_000, ConditioningSpec("at_least", 0.25), 20_000, 1, n_boot=200)
    sup = mc.sup_prob_estimate(system, 10_000, ConditioningSpec("at_least", 0.35), 20_000, 1, n_boot=200)
    assert sub.estimate >= 0.97 and sup.estimate <= 0.03
    again = mc.sup_prob_estimate(system, 10_000, ConditioningSpec("at_least", 0.35), 20_000, 1, n_boot=200)
    assert again == sup
