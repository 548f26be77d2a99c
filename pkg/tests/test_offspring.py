import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sst

from gwcoal import offspring as off
from gwcoal.offspring import OffspringFamily, OffspringLaw, birth_death, explicit, near_critical_ternary


def test_birth_death_resolution():
    law = birth_death(1.0, 2.0)
    assert law.pmf == pytest.approx((1 / 3, 0.0, 2 / 3))
    assert law.rate == 3.0
    assert law.mean == pytest.approx(4 / 3)
    assert law.factorial_moment(2) == pytest.approx(4 / 3)


def test_rejections():
    with pytest.raises(ValueError):
        explicit([1.0], 1.0)
    with pytest.raises(ValueError):
        explicit([0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        explicit([0.5, 0.6], 1.0)
    with pytest.raises(ValueError):
        explicit([-0.1, 0.1, 1.0], 1.0)
    with pytest.raises(ValueError):
        explicit([0.5, 0.0, 0.5], 0.0)
    with pytest.raises(ValueError):
        near_critical_ternary(1.0, 0.0, 3.0, 10.0)


def test_factorial_moments():
    L3 = explicit([0, 0, 0, 1], 1.0)
    assert L3.factorial_moment(3) == 6
    assert L3.factorial_moment(4) == 0
    law = explicit([0.2, 0.3, 0.5], 1.0)
    assert law.factorial_moment(1) == pytest.approx(law.mean)
    with pytest.raises(ValueError):
        law.factorial_moment(0)


def test_pgf_and_u():
    law = birth_death(1.0, 2.0)
    assert law.u(1.0) == pytest.approx(0.0, abs=1e-15)
    assert law.pgf(0.0) == pytest.approx(1 / 3)
    assert law.u(0.0) == pytest.approx(1 / 3)
    h = 1e-6
    # central difference at 1 - h (u is only defined on [0, 1])
    d = (law.u(1.0) - law.u(1 - 2 * h)) / (2 * h)
    assert d == pytest.approx(law.mean - 1, abs=1e-5)
    th = np.linspace(0, 1, 11)
    assert np.allclose(law.pgf(th), 1 / 3 + 2 / 3 * th ** 2)
    with pytest.raises(ValueError):
        law.pgf(1.5)


def test_size_biased_degenerate(rng):
    assert set(off.sample_size_biased(birth_death(1.0, 2.0), rng, 1000)) == {2}
    assert set(off.sample_size_biased(explicit([0, 0, 0, 1], 1.0), rng, 100)) == {3}


def test_size_biased_frequencies(rng):
    law = explicit([0.2, 0.3, 0.5], 1.0)
    n = 1_000_000
    draws = off.sample_size_biased(law, rng, n)
    counts = np.bincount(draws, minlength=3)
    expected = np.array([0, 0.3, 1.0]) / 1.3
    assert counts[0] == 0
    for j in (1, 2):
        p = expected[j]
        assert abs(counts[j] / n - p) <= 3 * np.sqrt(p * (1 - p) / n)
    chi2 = sst.chisquare(counts[1:], expected[1:] * n)
    assert chi2.pvalue > 0.001


def test_near_critical_examples():
    assert near_critical_ternary(1.0, 1.0, 1.0, 100.0).mean == pytest.approx(1.01, abs=1e-14)
    law = near_critical_ternary(1.0, -1.0, 1.0, 200.0)
    assert law.mean == pytest.approx(0.995, abs=1e-14)
    assert law.factorial_moment(2) == pytest.approx(1.0, abs=1e-14)
    # mass on 3 is only used when {0,1,2} cannot carry the moments, and it is O(1/T)
    assert len(near_critical_ternary(1.0, 0.5, 0.8, 50.0).pmf) == 3
    assert law.pmf[3] < 1 / 200


@given(mu=st.floats(-3, 3), sigma2=st.floats(0.05, 1.2), T=st.floats(20, 1e4))
def test_near_critical_moments_exact(mu, sigma2, T):
    try:
        law = near_critical_ternary(1.0, mu, sigma2, T)
    except ValueError:
        return
    assert abs(sum(law.pmf) - 1) <= 1e-12
    assert law.mean == pytest.approx(1 + mu / T, abs=1e-12)
    assert law.factorial_moment(2) == pytest.approx(sigma2, abs=1e-12)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=7))
def test_law_invariants(w):
    w = np.array(w)
    if w.sum() == 0 or (w[0] + w[1]) / w.sum() > 1 - 1e-6:
        return
    law = explicit(w / w.sum(), 1.5)
    assert abs(law.p.sum() - 1) <= 1e-12
    assert abs(law.u(1.0)) <= 1e-12
    sb = law.size_biased_pmf()
    assert sb[0] == 0 and abs(sb.sum() - 1) < 1e-12
    assert law.cdf()[-1] == 1.0
    th = np.linspace(0, 1, 7)
    horner = law.pgf(th)
    direct = sum(c * th ** j for j, c in enumerate(law.pmf))
    assert np.allclose(horner, direct, atol=1e-14)


def test_family_json_roundtrip():
    fam = OffspringFamily("near_critical_ternary", {"r": 1.0, "mu": 1.0, "sigma2": 0.5})
    back = OffspringFamily.from_json(json.loads(json.dumps(fam.to_json())))
    assert back.resolve(200.0) == fam.resolve(200.0)
    assert off.law_from_json(birth_death(1, 2).to_json()) == birth_death(1, 2)
    assert off.law_from_json(explicit([0.2, 0.3, 0.5], 2.0).to_json()).rate == 2.0
    with pytest.raises(ValueError):
        OffspringFamily.from_json({"kind": "bd", "params": {"alpha": 1}})
    with pytest.raises(ValueError):
        OffspringFamily.from_json({"kind": "poisson", "params": {}})
