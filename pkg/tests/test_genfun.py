import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwcoal import genfun as gf
from gwcoal.ensemble import run_unconditioned_counts
from gwcoal.genfun import BDParams
from gwcoal.offspring import birth_death, explicit, near_critical_ternary

BD12 = BDParams(1.0, 2.0)


def test_extinction_examples():
    assert gf.bd_extinction(BD12, 0.0) == 0.0
    assert gf.bd_extinction(BDParams(0.0, 1.0), 3.7) == 0.0
    assert gf.bd_extinction(BDParams(1.0, 1.0), 1.0) == pytest.approx(0.5)


def test_critical_branch_is_continuous():
    near = BDParams(1.0, 1.0 + 1e-7)
    crit = BDParams(1.0, 1.0)
    for t in (0.3, 2.0, 10.0):
        assert gf.bd_extinction(near, t) == pytest.approx(gf.bd_extinction(crit, t), rel=1e-5)
        assert gf.bd_q(near, t) == pytest.approx(gf.bd_q(crit, t), rel=1e-5)


def test_descending_moment_examples():
    for p in (BD12, BDParams(2.0, 1.0), BDParams(1.0, 1.0)):
        assert gf.bd_descending_moment(p, 1, 1.3) == pytest.approx(math.exp(p.gamma * 1.3))
    assert gf.bd_descending_moment(BDParams(1.0, 1.0), 3, 2.0) == pytest.approx(24.0)


def test_pmf_tail_and_moments_agree_with_series():
    for p in (BD12, BDParams(2.0, 1.0), BDParams(1.0, 1.0)):
        t = 0.8
        j = np.arange(0, 4000)
        pmf = np.array([gf.bd_pmf(p, int(x), t) for x in j])
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
        for k in (1, 2, 3):
            assert gf.bd_tail(p, k, t) == pytest.approx(pmf[k:].sum(), abs=1e-12)
            falling = np.prod([j - i for i in range(k)], axis=0)
            assert gf.bd_descending_moment(p, k, t) == pytest.approx(float(falling @ pmf), rel=1e-10)
    assert gf.bd_tail(BDParams(0.0, 1.0), 1, 5.0) == 1.0
    assert gf.bd_tail(BD12, 1, 0.0) == 1.0
    assert gf.bd_tail(BD12, 2, 0.0) == 0.0


def test_counts_monte_carlo(rng):
    n = 1_000_000
    N = run_unconditioned_counts(birth_death(1.0, 2.0), 1.0, n, rng)
    p_ext = gf.bd_extinction(BD12, 1.0)
    assert abs((N == 0).mean() - p_ext) <= 3 * math.sqrt(p_ext * (1 - p_ext) / n)
    tail = gf.bd_tail(BD12, 2, 1.0)
    assert abs((N >= 2).mean() - tail) <= 3 * math.sqrt(tail * (1 - tail) / n)
    x = N * (N - 1.0)
    assert abs(x.mean() - gf.bd_descending_moment(BD12, 2, 1.0)) <= 3 * x.std() / math.sqrt(n)


def test_backward_F_against_closed_form():
    law = birth_death(1.0, 2.0)
    assert gf.backward_F(law, 1.0, 4.0) == pytest.approx(1.0, abs=1e-12)
    assert gf.backward_F(law, 0.5, 1.0) == pytest.approx(gf.bd_pgf(BD12, 0.5, 1.0), abs=1e-8)
    th = np.linspace(0, 1, 21)
    assert np.allclose(gf.backward_F(law, th, 2.0), gf.bd_pgf(BD12, th, 2.0), atol=1e-8)
    crit = birth_death(1.0, 1.0)
    assert np.allclose(gf.backward_F(crit, th, 3.0), gf.bd_pgf(BDParams(1.0, 1.0), th, 3.0), atol=1e-8)


def test_backward_F_extinction_monte_carlo(rng):
    law = near_critical_ternary(1.0, 0.5, 0.8, 20.0)
    n = 200_000
    N = run_unconditioned_counts(law, 5.0, n, rng)
    p = gf.extinction(law, 5.0)
    assert abs((N == 0).mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


@given(t=st.floats(0.01, 4.0))
def test_backward_F_monotone(t):
    law = explicit([0.3, 0.2, 0.3, 0.2], 1.3)
    th = np.linspace(0, 1, 15)
    F = gf.backward_F(law, th, t)
    assert np.all(np.diff(F) >= -1e-12)
    assert F.min() >= -1e-12 and F.max() <= 1 + 1e-12


def test_forward_equation():
    # dF/dt = r u(theta) dF/dtheta
    law = explicit([0.25, 0.25, 0.3, 0.2], 1.0)
    h = 1e-4
    for th in (0.2, 0.5, 0.8):
        for t in (0.5, 1.5):
            dt = (gf.backward_F(law, th, t + h) - gf.backward_F(law, th, t - h)) / (2 * h)
            dth = (gf.backward_F(law, th + h, t) - gf.backward_F(law, th - h, t)) / (2 * h)
            assert dt == pytest.approx(law.rate * law.u(th) * dth, abs=1e-5)


def test_moment_ode_first_moment():
    law = explicit([0.25, 0.25, 0.3, 0.2], 1.7)
    curve = gf.moment_ode(law, 1, 3.0)
    for t in (0.5, 1.0, 3.0):
        assert curve(1, t) == pytest.approx(math.exp(law.rate * (law.mean - 1) * t), rel=1e-10)


@pytest.mark.parametrize("a,b", [(1.0, 2.0), (2.0, 1.0), (1.0, 1.0)])
def test_moment_ode_reproduces_bd(a, b):
    curve = gf.moment_ode(birth_death(a, b), 3, 5.0)
    p = BDParams(a, b)
    for t in np.linspace(0.1, 5.0, 12):
        for k in (1, 2, 3):
            assert curve(k, t) == pytest.approx(gf.bd_descending_moment(p, k, t), rel=1e-8)


def test_moment_ode_scaled_limit():
    T = 200.0
    law = near_critical_ternary(1.0, 1.0, 1.0, T)
    curve = gf.moment_ode(law, 3, T)
    for k in (2, 3):
        v = curve(k, T) / T ** (k - 1)
        assert v == pytest.approx(gf.scaled_moment_limit(k, 1.0, 1.0, 1.0, 1.0), rel=0.05)


def test_small_population_probs():
    for p in (BD12, BDParams(1.0, 1.0)):
        probs = gf.small_population_probs(birth_death(p.alpha, p.beta), 1.2, 5)
        ref = [gf.bd_pmf(p, j, 1.2) for j in range(5)]
        assert np.allclose(probs, ref, atol=1e-9)


def test_survival_scaled():
    T = 400.0
    assert gf.survival_scaled(near_critical_ternary(1.0, 0.0, 1.0, T), 1.0, T) == pytest.approx(2.0, rel=0.1)
    lim = gf.survival_limit(1.0, 1.0, 1.0, 1.0)
    assert lim == pytest.approx(2 * math.e / (math.e - 1))
    assert gf.survival_scaled(near_critical_ternary(1.0, 1.0, 1.0, T), 1.0, T) == pytest.approx(lim, rel=0.1)
    # critical birth-death: T (1 - p_T) = T / (beta T + 1)
    crit = birth_death(2.0, 2.0)
    assert gf.survival_scaled(crit, 1.0, 10.0) == pytest.approx(10 / 21, rel=1e-8)
    assert 10 * (1 - gf.bd_extinction(BDParams(2.0, 2.0), 10.0)) == pytest.approx(10 / 21, rel=1e-14)


def test_conditioned_moment():
    for p in (BD12, BDParams(1.0, 1.0)):
        assert gf.bd_conditioned_moment(p, 2, 1.5) == pytest.approx(
            gf.bd_descending_moment(p, 2, 1.5) / gf.bd_tail(p, 2, 1.5), rel=1e-12)


def test_bad_inputs():
    with pytest.raises(ValueError):
        BDParams(1.0, 0.0)
    with pytest.raises(ValueError):
        gf.backward_F(birth_death(1, 2), 1.5, 1.0)
    with pytest.raises(ValueError):
        gf.moment_ode(birth_death(1, 2), 0, 1.0)
