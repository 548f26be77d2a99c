"""Named verification checks shared by the CLI verify command and the acceptance tests.

Each check takes a seed and a scale factor (1.0 = full sample sizes) and returns
a list of ComparisonReport objects.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import closed_form as cf
from . import genfun, limit_constructions as lc, spine
from .ensemble import run_conditioned
from .genfun import BDParams
from .offspring import birth_death, near_critical_ternary
from .rng import LIMIT, MISC, SPINE, master_rng
from .stats import (ComparisonReport, joint_tail_compare, ks_critical, ks_report, topology_frequencies,
                    two_sample_tail_compare)

BD_GRID_K2 = [[0.25], [0.75], [1.25], [1.75], [2.5]]
BD_GRID_K3 = [[0.2, 0.6], [0.4, 1.0], [0.6, 1.4], [0.3, 2.0], [0.8, 1.6],
              [1.0, 2.2], [0.5, 0.9], [1.2, 1.8], [0.1, 2.5]]
UNIT_GRID_K2 = [[0.1], [0.3], [0.5], [0.7], [0.9]]
UNIT_GRID_K3 = [[0.1, 0.3], [0.2, 0.5], [0.3, 0.7], [0.1, 0.8], [0.4, 0.6],
                [0.5, 0.9], [0.25, 0.4], [0.6, 0.8], [0.05, 0.95]]


def _n(full: int, scale: float, floor: int = 200) -> int:
    return max(floor, int(round(full * scale)))


def _from_spine(r: spine.Report) -> ComparisonReport:
    return ComparisonReport(r.identity, 0, r.lhs, r.rhs, "3sigma", math.hypot(r.lhs_ci, r.rhs_ci),
                            r.passed, r.note)


# ---------------------------------------------------------------- forward-simulation laws

def check_bd_noncrit(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    n = _n(100_000, scale)
    out = []
    for k, grid in ((2, BD_GRID_K2), (3, BD_GRID_K3)):
        ens = run_conditioned(birth_death(1.0, 2.0), 3.0, (k,), n, seed + k)
        out += joint_tail_compare(ens.conditioned(k), lambda s: cf.bd_joint_tail(1.0, 2.0, 3.0, s),
                                  grid, name=f"bd-noncrit k={k} tail")
    return out


def check_bd_crit(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    n = _n(100_000, scale)
    T = 50.0
    ens = run_conditioned(birth_death(1.0, 1.0), T, (2,), n, seed)
    S = ens.conditioned(2)[:, 0] / T
    return [ks_report("bd-crit k=2 KS of S/T", S, lambda x: 1 - cf.bd_crit_k2_tail(1.0, T, x))]


def _nearcrit_reports(mu, sigma2, n, seed, T=200.0):
    law = near_critical_ternary(1.0, mu, sigma2, T)
    # one ensemble serves both k: rows with N_T >= 3 form the k = 3 sample
    ens = run_conditioned(law, T, (2, 3), n, seed)
    reps = {}
    for k, grid in ((2, UNIT_GRID_K2), (3, UNIT_GRID_K3)):
        S = ens.conditioned(k) / T
        reps[k] = joint_tail_compare(S, lambda s: cf.nearcrit_joint_tail(1.0, mu, s), grid,
                                     slack=0.02, name=f"near-crit mu={mu:g} sigma2={sigma2:g} k={k} tail")
    return reps, ens


def check_nearcrit(seed: int, scale: float = 1.0, mus=(-1.0, 0.0, 1.0)) -> list[ComparisonReport]:
    n = _n(50_000, scale)
    out = []
    for mu in mus:
        base, _ = _nearcrit_reports(mu, 1.0, n, seed + int(10 * mu) + 100)
        alt, _ = _nearcrit_reports(mu, 0.5, n, seed + int(10 * mu) + 200)
        for k in (2, 3):
            out += base[k]
            same = [a.passed == b.passed for a, b in zip(base[k], alt[k])]
            out.append(ComparisonReport(f"near-crit mu={mu:g} k={k} sigma2-invariance", n, float(sum(same)),
                                        float(len(same)), "abs", 0.0, all(same),
                                        "grid decisions at sigma2=1 and sigma2=0.5"))
    return out


def check_nearcrit_exact(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    """mu = 0 ternary ensembles against the exact finite-T law, no slack.

    With mu = 0 the ternary law has p0 = p2 = sigma2/2, and one-child events leave
    the genealogy unchanged, so split times follow critical birth-death with
    beta = r sigma2 / 2. This separates finite-T bias from simulation error.
    """
    n = _n(20_000, scale)
    T = 200.0
    out = []
    for sigma2 in (1.0, 0.5):
        ens = run_conditioned(near_critical_ternary(1.0, 0.0, sigma2, T), T, (2, 3), n, seed + int(100 * sigma2))
        for k, grid in ((2, UNIT_GRID_K2), (3, UNIT_GRID_K3)):
            out += joint_tail_compare(ens.conditioned(k) / T,
                                      lambda s: cf.bd_crit_joint_tail(sigma2 / 2, T, s), grid,
                                      name=f"near-crit mu=0 sigma2={sigma2:g} k={k} exact finite-T tail")
    return out


def check_topology(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    n = _n(100_000, scale)
    ens = run_conditioned(birth_death(1.0, 2.0), 3.0, (4,), n, seed)
    reps = topology_frequencies([c for c in ens.chains[4] if c is not None], 4)
    for r in reps:
        r.statistic = "bd k=4 " + r.statistic
    rng = master_rng(seed, LIMIT)
    chains = [lc.build_limit_tree(lc.sample_limit_times(5, 0.0, 1.0, rng), rng).partition_chain
              for _ in range(_n(20_000, scale))]
    lim = topology_frequencies(chains, 5)
    for r in lim:
        r.statistic = "limit tree k=5 " + r.statistic
    return reps + lim


# ---------------------------------------------------------------- limit constructions

def check_limit_construction(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    n = _n(100_000, scale)
    rng = master_rng(seed, LIMIT)
    out = []
    for mu in (0.0, 1.0):
        S = lc.sample_limit_splits(n, 3, mu, 1.0, rng)
        out += joint_tail_compare(S, lambda s: cf.nearcrit_joint_tail(1.0, mu, s), UNIT_GRID_K3,
                                  name=f"limit construction mu={mu:g} k=3 tail")
    m = _n(100_000, scale)
    for kbig, grid in ((3, UNIT_GRID_K2), (4, UNIT_GRID_K3)):
        for mu in (0.0, 1.0):
            dropped = lc.consistency_drop(kbig - 1, m, mu, 1.0, rng)
            direct = lc.sample_limit_splits(m, kbig - 1, mu, 1.0, rng)
            out += two_sample_tail_compare(dropped, direct, grid,
                                           name=f"consistency drop {kbig}->{kbig - 1} mu={mu:g}")
    return out


# ---------------------------------------------------------------- spine identities

def check_spine(seed: int, scale: float = 1.0, fault: str | None = None) -> list[ComparisonReport]:
    out = []
    rng = master_rng(seed, SPINE)
    n_ks = _n(1_000_000, scale, 10_000)
    for a, b, T in ((1.0, 1.0, 2.0), (1.0, 2.0, 2.0)):
        p = BDParams(a, b)
        x = spine.sample_bd_split_times(p, T, rng, n_ks)
        out.append(ks_report(f"spine split-time marginal alpha={a:g} beta={b:g} T={T:g}", x,
                             lambda s: spine.bd_split_time_cdf(p, T, s),
                             threshold=max(0.005, ks_critical(x.size))))
    law = birth_death(1.0, 2.0)
    skels = [spine.sample_skeleton_bd(2, 2.0, BDParams(1.0, 2.0), rng) for _ in range(3)]
    out += [_from_spine(r) for r in spine.campbell_check(law, skels, (0.1, 0.5, 1.0),
                                                          _n(100_000, scale, 2000), rng,
                                                          size_biased=fault != "size-bias")]
    nf = _n(100_000, scale, 2000)
    for lw, T, sel in ((law, 2.0, "one"), (law, 2.0, "tail:1.0"), (birth_death(1.0, 1.0), 20.0, "tail:10.0")):
        r = spine.firstprop_check(lw, T, 2, sel, n_forward=nf, n_q=nf, seed=seed + 7)
        out.append(_from_spine(r))
        if lw.params["alpha"] == lw.params["beta"]:
            ref = cf.bd_crit_joint_tail(1.0, T, [0.5])
            for side, val, ci in (("forward", r.lhs, r.lhs_ci), ("spine", r.rhs, r.rhs_ci)):
                out.append(ComparisonReport(f"firstprop {side} estimate vs critical closed form", nf, val, ref,
                                            "3sigma", ci, abs(val - ref) <= ci))
    for N, k in ((5, 2), (2, 2), (3, 3), (4, 4), (5, 5), (40, 3)):
        out.append(_from_spine(spine.recip_check(k, constant=N)))
    # geometric N on {2, 3, ...} with mean 4
    p = 1 / 3
    N = 1 + rng.geometric(p, _n(1_000_000, scale, 10_000))
    lap = lambda z: math.exp(-2 * z) * p / (1 - (1 - p) * math.exp(-z))
    out.append(_from_spine(spine.recip_check(2, samples=N, laplace=lap)))
    return out


# ---------------------------------------------------------------- analytic identities

def check_analytic(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    rng = master_rng(seed, MISC)
    out = []
    worst = {"inf": 0.0, "unit": 0.0}
    for _ in range(100):
        k = int(rng.integers(2, 6))
        e = rng.uniform(0.05, 10.0, k)
        for dom in worst:
            a = cf.partial_fraction_integral(e, dom)
            q = cf.partial_fraction_quad(e, dom)
            worst[dom] = max(worst[dom], abs(a - q) / max(1.0, abs(q)))
    for dom, w in worst.items():
        out.append(ComparisonReport(f"partial fractions on (0,{'inf' if dom == 'inf' else 1}) vs quadrature",
                                    100, w, 0.0, "abs", 1e-9, w <= 1e-9))
    wb = wn = 0.0
    for _ in range(100):
        a, b = rng.uniform(0.0, 3.0), rng.uniform(0.1, 3.0)
        T = rng.uniform(0.1, 5.0)
        sj = rng.uniform(0.0, T)
        y = rng.uniform(0.0, 1.0)
        v, q = cf.integrate_out_bd(sj, T, a, b, y), cf.integrate_out_bd_quad(sj, T, a, b, y)
        wb = max(wb, abs(v - q) / max(1.0, abs(q)))
        r, mu, s2 = rng.uniform(0.2, 3.0), rng.choice([-1, 1]) * rng.uniform(0.1, 3.0), rng.uniform(0.1, 2.0)
        si, phi = rng.uniform(0.0, 1.0), rng.uniform(0.0, 5.0)
        v, q = cf.integrate_out_nearcrit(si, r, mu, s2, phi), cf.integrate_out_nearcrit_quad(si, r, mu, s2, phi)
        wn = max(wn, abs(v - q) / max(1.0, abs(q)))
    out.append(ComparisonReport("integrate-out (birth-death) vs quadrature", 100, wb, 0.0, "abs", 1e-9, wb <= 1e-9))
    out.append(ComparisonReport("integrate-out (near-critical) vs quadrature", 100, wn, 0.0, "abs", 1e-9,
                                wn <= 1e-9))
    grid = np.linspace(0.02, 0.98, 50)
    ref = cf.critk2(grid)
    wa = max(abs(cf.athreya_value(s) - c) for s, c in zip(grid, ref))
    wd = max(abs(cf.durrett_series(s) - c) for s, c in zip(grid, ref))
    out.append(ComparisonReport("geometric-mixture representation vs critical k=2 tail", 50, wa, 0.0, "abs",
                                1e-10, wa <= 1e-10))
    out.append(ComparisonReport("power-series representation vs critical k=2 tail", 50, wd, 0.0, "abs",
                                1e-10, wd <= 1e-10))
    wp = 0.0
    for g in (-2.0, -0.5, 0.0, 0.5, 1.0, 3.0):
        for t in (0.1, 0.5, 0.9, 0.99):
            q = integrate.quad(lambda s: cf.purple_rate(g, s), 0.0, t, epsabs=1e-13, epsrel=1e-13)[0]
            wp = max(wp, abs(q - cf.yule_time_change(g, t)))
    out.append(ComparisonReport("integrated reduced-tree rate vs Yule time change", 24, wp, 0.0, "abs", 1e-8,
                                wp <= 1e-8))
    return out


def check_asymptotics(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    out = []
    T = 400.0
    for mu in (0.0, 1.0):
        law = near_critical_ternary(1.0, mu, 1.0, T)
        v = genfun.survival_scaled(law, 1.0, T)
        ref = genfun.survival_limit(mu, 1.0, 1.0, 1.0)
        out.append(ComparisonReport(f"T P(N_T>0), mu={mu:g}, T=400", 1, v, ref, "abs", 0.1 * ref,
                                    abs(v / ref - 1) <= 0.1))
    a, b = 1.0, 2.0
    g = b - a
    s = 30 / g
    ratio = cf.k2_limits("supercritical_bd", a, b, s) / (2 * g * s * math.exp(-g * s))
    out.append(ComparisonReport("supercritical k=2 tail / 2 g s e^{-g s} at s=30/g", 1, ratio, 1.0, "abs", 0.05,
                                abs(ratio - 1) <= 0.05))
    a, b = 2.0, 1.0
    d = a - b
    s = 10 / d
    pref = cf.subcritical_k2_distance_tail(a, b, s) * math.exp(d * s)
    ref = 1 - 2 * b / (3 * a)
    out.append(ComparisonReport("subcritical k=2 distance tail prefactor at s=10/d", 1, pref, ref, "abs",
                                0.05 * ref, abs(pref / ref - 1) <= 0.05))
    return out


def density_mass(mu: float, k: int) -> float:
    """Nested adaptive quadrature of the limit density over [0,1]^{k-1}."""
    f = lambda *s: cf.limit_density(1.0, mu, list(s))
    if k == 2:
        return integrate.quad(lambda s: f(s), 0, 1, epsabs=1e-10, epsrel=1e-10, limit=200)[0]
    if k == 3:
        inner = lambda s1: integrate.quad(lambda s2: f(s1, s2), 0, 1, epsabs=1e-10, epsrel=1e-10, limit=200)[0]
        return integrate.quad(inner, 0, 1, epsabs=1e-9, epsrel=1e-9, limit=200)[0]
    raise ValueError("k must be 2 or 3")


def check_normalization(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    out = []
    for k in (2, 3):
        for mu in (-1.0, 0.0, 1.0):
            v = density_mass(mu, k)
            out.append(ComparisonReport(f"limit density mass k={k} mu={mu:g}", 1, v, 1.0, "abs", 1e-6,
                                        abs(v - 1) <= 1e-6))
    return out


def check_determinism(seed: int, scale: float = 1.0) -> list[ComparisonReport]:
    import tempfile
    from pathlib import Path
    from .cli import main
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text('{"regime": "bd_noncrit", "law": {"alpha": 1.0, "beta": 2.0}, "T": 3.0, "k": 3, '
                       f'"replicates": {_n(2000, scale, 200)}, "seed": {seed}}}')
        for th in (1, 4):
            d = Path(tmp) / f"t{th}"
            code = main(["simulate", "--config", str(cfg), "--threads", str(th), "--out", str(d)])
            outs.append((code, (d / "simulate.csv").read_bytes()))
    same = outs[0] == outs[1] and outs[0][0] == 0
    return [ComparisonReport("simulate output identical for 1 and 4 threads", len(outs[0][1]), float(same), 1.0,
                             "abs", 0.0, same)]


@dataclass(frozen=True)
class Check:
    name: str
    description: str
    fn: Callable[..., list[ComparisonReport]]
    quick_scale: float | None  # None: not part of the quick suite


CHECKS = {c.name: c for c in [
    Check("bd-noncrit", "birth-death noncritical joint tails vs closed form", check_bd_noncrit, 0.05),
    Check("bd-crit", "birth-death critical KS of S/T", check_bd_crit, 0.05),
    Check("near-crit", "near-critical ternary tails vs scaling limit, sigma2 invariance", check_nearcrit, None),
    Check("near-crit-exact", "mu=0 ternary ensembles vs exact finite-T critical law", check_nearcrit_exact,
          0.1),
    Check("topology", "block-choice and split-size chi-square", check_topology, 0.1),
    Check("limit", "limit construction vs density; consistency under dropping", check_limit_construction, 0.05),
    Check("spine", "spine split law, Campbell formula, first-moment identity, reciprocal moments", check_spine,
          0.02),
    Check("analytic", "partial fractions, integrate-out, series, reduced-tree time change", check_analytic, 1.0),
    Check("asymptotics", "survival and k=2 tail asymptotics", check_asymptotics, 1.0),
    Check("normalization", "limit density integrates to one", check_normalization, 1.0),
    Check("determinism", "simulate output independent of thread count", check_determinism, 0.2),
]}

SUITES = {
    "quick": [n for n, c in CHECKS.items() if c.quick_scale is not None],
    "full": list(CHECKS),
}
