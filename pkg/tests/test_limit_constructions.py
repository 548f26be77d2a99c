import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sst

from gwcoal import closed_form as cf
from gwcoal import limit_constructions as lc
from gwcoal.genfun import BDParams
from gwcoal.spine import bd_split_time_cdf


def test_sample_X_law(rng):
    X = lc.sample_X(rng, 200_000)
    assert np.median(X) == pytest.approx(1.0, abs=0.02)
    assert sst.kstest(X, lambda x: x / (1 + x)).pvalue > 1e-3


def test_small_mu_approaches_linear_rescaling(rng):
    X = lc.sample_X(rng, (1000, 4))
    a = lc._times_from_X(X, 1e-9, 1.0)
    b = lc._times_from_X(X, 0.0, 1.0)
    assert np.max(np.abs(a - b)) < 1e-6
    # mu = 0: split time is 1 - X_i / max X
    assert np.allclose(b, 1 - X / X.max(axis=1, keepdims=True))


@pytest.mark.parametrize("mu", [-1.0, 0.0, 1.0])
def test_k2_splits_follow_closed_form(mu):
    rng = np.random.default_rng(99)
    S = lc.sample_limit_splits(100_000, 2, mu, 1.0, rng)[:, 0]
    res = sst.kstest(S, np.vectorize(lambda x: 1 - cf.nearcritk2(1.0, mu, x)))
    assert res.pvalue > 1e-3


def test_k3_joint_tail():
    rng = np.random.default_rng(5)
    S = lc.sample_limit_splits(100_000, 3, 1.0, 1.0, rng)
    for s in [(0.2, 0.5), (0.4, 0.8), (0.1, 0.3)]:
        emp = np.all(S >= np.array(s), axis=1).mean()
        ref = cf.nearcrit_joint_tail(1.0, 1.0, list(s))
        assert abs(emp - ref) <= 3 * np.sqrt(ref * (1 - ref) / S.shape[0])


def test_limit_times_shape(rng):
    lt = lc.sample_limit_times(5, 0.5, 1.0, rng)
    assert lt.times[lt.I] == 0.0
    assert lt.splits.size == 4
    assert np.all((lt.splits > 0) & (lt.splits < 1))
    with pytest.raises(ValueError):
        lc.sample_limit_times(1, 0.0, 1.0, rng)


@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.sampled_from([-1.0, 0.0, 2.0]))
def test_tree_invariants(k, seed, mu):
    rng = np.random.default_rng(seed)
    tree = lc.build_limit_tree(lc.sample_limit_times(k, mu, 1.0, rng), rng)
    assert int(np.sum(tree.attach >= 0)) == k - 1
    assert tree.attach[tree.I] == -1
    for i in range(k):
        seen, j = set(), i
        while j != tree.I:
            assert j not in seen
            seen.add(j)
            # attachment target is a taller line
            assert tree.times[tree.attach[j]] < tree.times[j]
            j = int(tree.attach[j])
    chain = tree.partition_chain
    assert len(chain) == k and len(chain[0]) == 1 and len(chain[-1]) == k
    sig = tree.coalescence()
    off = sorted(sig[np.triu_indices(k, 1)].tolist())
    assert sorted(set(off)) == sorted(tree.splits.tolist())


def test_attachment_rule_on_fixed_layout(rng):
    # tallest line 0 at position 0.5; line 1 (t=.2) at .9, line 2 (t=.6) at .8, line 3 (t=.4) at .1
    tree = lc.build_limit_tree(np.array([0.0, 0.2, 0.6, 0.4]), rng, U=np.array([0.5, 0.9, 0.8, 0.1]))
    assert tree.attach.tolist() == [-1, 0, 0, 0]
    tree = lc.build_limit_tree(np.array([0.0, 0.6, 0.2, 0.4]), rng, U=np.array([0.5, 0.9, 0.8, 0.1]))
    assert tree.attach.tolist() == [-1, 2, 0, 0]


def test_consistency_drop_matches_direct_sampling():
    rng = np.random.default_rng(11)
    a = lc.consistency_drop(2, 20_000, 0.0, 1.0, rng)
    b = lc.sample_limit_splits(20_000, 2, 0.0, 1.0, rng)
    assert sst.ks_2samp(a[:, 0], b[:, 0]).pvalue > 1e-3


def test_q_population_decomposition(rng):
    k, s2, r = 3, 0.8, 1.5
    Z = lc.q_population_decomposition(k, s2, rng, 100_000, r=r)
    scale = r * s2 / 2
    # V * Gamma(2) is exponential, so the total is Gamma(k + 1)
    assert Z.mean() == pytest.approx((k + 1) * scale, rel=0.01)
    assert sst.kstest(Z, sst.gamma(k + 1, scale=scale).cdf).pvalue > 1e-3
    one = rng.random(100_000) * rng.gamma(2.0, scale, 100_000)
    assert sst.kstest(one, sst.expon(scale=scale).cdf).pvalue > 1e-3
    assert lc.q_population_decomposition(2, 1.0, rng).shape == ()


def test_split_marginal_is_scaled_bd_marginal():
    s = np.linspace(0, 1, 11)
    for mu in (-2.0, 0.0, 1.5):
        r = 0.7
        p = BDParams(2.0, 2.0 + r * mu)
        assert np.allclose(lc.expected_split_marginal_cdf(mu, r, s), bd_split_time_cdf(p, 1.0, s), atol=1e-12)


def test_sequential_and_vectorised_samplers_agree():
    rng = np.random.default_rng(21)
    a = np.array([rng.permutation(lc.sample_limit_times(3, 1.0, 1.0, rng).splits) for _ in range(20_000)])
    b = lc.sample_limit_splits(20_000, 3, 1.0, 1.0, rng)
    assert sst.ks_2samp(a[:, 0], b[:, 0]).pvalue > 1e-3
    assert sst.ks_2samp(a.min(axis=1), b.min(axis=1)).pvalue > 1e-3
