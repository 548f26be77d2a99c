"""Acceptance criteria at full, pinned sample sizes.

Each criterion prints one PASS/FAIL line. Monte Carlo criteria follow the
multiple-testing policy: per-comparison level about 0.01, at least 95% of the
comparisons must pass, and a failing criterion is re-run once on a fresh seed.
Exact (non-random) criteria must pass every comparison.

Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""
from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import pytest

from gwcoal import checks
from gwcoal.stats import ComparisonReport, suite_passes

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []

BASE_SEED = 20240601


@dataclass
class Criterion:
    number: int
    title: str
    fn: Callable[[int], list[ComparisonReport]]
    random: bool = True
    every_point: bool = False  # the criterion demands every comparison pass
    tolerance: str = ""


@lru_cache(maxsize=2)
def _spine(seed):
    return tuple(checks.check_spine(seed))


def _spine_mc(seed):
    return [r for r in _spine(seed) if not r.statistic.startswith("recip[N=")]


def _spine_exact(seed):
    return [r for r in _spine(seed) if r.statistic.startswith("recip[N=")]


CRITERIA = [
    Criterion(1, "birth-death noncritical joint tails, k=2,3, n=1e5", checks.check_bd_noncrit,
              every_point=True, tolerance="3-sigma Wilson band at every grid point"),
    Criterion(2, "birth-death critical KS of S/T, T=50, n=1e5", checks.check_bd_crit,
              every_point=True, tolerance="KS D <= 1.63/sqrt(n)"),
    Criterion(3, "near-critical ternary vs scaling limit, T=200, n=5e4, sigma2 invariance",
              checks.check_nearcrit, tolerance="3-sigma Wilson band + 0.02; identical decisions at sigma2=0.5"),
    Criterion(4, "topology chi-square, BD k=4 n=1e5 and limit trees k=5", checks.check_topology,
              tolerance="chi-square alpha=0.01"),
    Criterion(5, "limit construction tails and consistency under dropping, n=1e5",
              checks.check_limit_construction, tolerance="3-sigma"),
    Criterion(6, "spine identities: split law KS, Campbell, first moment", _spine_mc,
              tolerance="KS <= 0.005 at 1e6; combined 3-sigma"),
    Criterion(6, "spine identities: reciprocal moments for constant N", _spine_exact, random=False,
              tolerance="abs 1e-8"),
    Criterion(7, "analytic identities vs quadrature", checks.check_analytic, random=False,
              tolerance="1e-9 / 1e-10 / 1e-8"),
    Criterion(8, "survival and k=2 tail asymptotics", checks.check_asymptotics, random=False,
              tolerance="rel 10% (survival), 5% (tails)"),
    Criterion(9, "limit density normalisation, k=2,3", checks.check_normalization, random=False,
              tolerance="abs 1e-6"),
    Criterion(10, "simulate output identical across thread counts", checks.check_determinism, random=False,
              tolerance="byte equality"),
]


def _ok(c: Criterion, reps: list[ComparisonReport]) -> bool:
    if not c.random or c.every_point:
        return bool(reps) and all(r.passed for r in reps)
    return bool(reps) and suite_passes(reps)


def evaluate(c: Criterion, seed: int | None = None) -> tuple[bool, str, list[ComparisonReport]]:
    seed = BASE_SEED + c.number if seed is None else seed
    t0 = time.time()
    reps = c.fn(seed)
    ok = _ok(c, reps)
    tried = [seed]
    if not ok and c.random:
        seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
        tried.append(seed)
        reps = c.fn(seed)
        ok = _ok(c, reps)
    passed = sum(r.passed for r in reps)
    line = (f"{'PASS' if ok else 'FAIL'} criterion {c.number}: {c.title} | {passed}/{len(reps)} comparisons "
            f"| tol: {c.tolerance} | seeds {tried} | {time.time() - t0:.0f}s")
    return ok, line, reps


@pytest.mark.slow
@pytest.mark.parametrize("c", CRITERIA, ids=[f"{c.number}-{c.fn.__name__.strip('_')}" for c in CRITERIA])
def test_criterion(c: Criterion):
    ok, line, reps = evaluate(c)
    print(line)
    ACCEPTANCE_LINES.append(line)
    bad = [f"{r.statistic}: {r.observed:.6g} vs {r.reference:.6g} (tol {r.tolerance:.3g})"
           for r in reps if not r.passed]
    assert ok, "\n".join([line] + bad)


@pytest.mark.slow
def test_nearcrit_finite_T_diagnostic():
    """Not a criterion: mu = 0 ensembles against the exact finite-T law, to separate bias from error."""
    reps = checks.check_nearcrit_exact(BASE_SEED + 30)
    passed = sum(r.passed for r in reps)
    line = (f"{'PASS' if suite_passes(reps) else 'FAIL'} diagnostic (criterion 3 context): mu=0 ternary T=200 vs "
            f"exact finite-T critical law | {passed}/{len(reps)} comparisons | tol: 3-sigma, no slack")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert suite_passes(reps)


if __name__ == "__main__":
    results = []
    for c in CRITERIA:
        ok, line, _ = evaluate(c)
        print(line, flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
