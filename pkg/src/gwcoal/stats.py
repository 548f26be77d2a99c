"""Comparison machinery: KS, Wilson bands on grid tails, chi-square with cell merging."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sst

from .gw_sim import Partition


@dataclass
class ComparisonReport:
    statistic: str
    n: int
    observed: float
    reference: float
    rule: str  # "3sigma", "ks", "abs", "chi2"
    tolerance: float
    passed: bool
    note: str = ""

    def __post_init__(self) -> None:
        # numpy scalars would break JSON output
        self.n, self.passed = int(self.n), bool(self.passed)
        self.observed, self.reference, self.tolerance = float(self.observed), float(self.reference), float(self.tolerance)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ComparisonReport":
        return cls(**d)


def reports_to_json(reports: Sequence[ComparisonReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2)


def reports_from_json(text: str) -> list[ComparisonReport]:
    return [ComparisonReport.from_json(d) for d in json.loads(text)]


def reports_to_csv(reports: Sequence[ComparisonReport]) -> str:
    buf = io.StringIO()
    fields = list(ComparisonReport.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.to_json())
    return buf.getvalue()


# ---------------------------------------------------------------- Kolmogorov-Smirnov

def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic critical value c(alpha)/sqrt(n), c(alpha) = sqrt(-log(alpha/2)/2)."""
    return math.sqrt(-0.5 * math.log(alpha / 2)) / math.sqrt(n)


def ks_one_sample(samples, cdf: Callable, alpha: float = 0.01) -> tuple[float, float]:
    """(D, threshold) for the sup-distance between the empirical CDF and cdf."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    D = max(float(np.max(i / n - F)), float(np.max(F - (i - 1) / n)))
    return D, ks_critical(n, alpha)


def ks_report(name: str, samples, cdf: Callable, alpha: float = 0.01,
              threshold: float | None = None) -> ComparisonReport:
    D, thr = ks_one_sample(samples, cdf, alpha)
    thr = thr if threshold is None else threshold
    return ComparisonReport(name, int(np.size(samples)), D, 0.0, "ks", thr, D <= thr)


def ks_two_sample(a, b) -> tuple[float, float]:
    res = sst.ks_2samp(np.ravel(a), np.ravel(b))
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------- binomial bands

def wilson_interval(successes: int, n: int, z: float = 3.0) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clamp so that rounding never excludes p itself at p = 0 or 1
    return min(max(centre - half, 0.0), p), max(min(centre + half, 1.0), p)


def joint_tail_compare(samples, tail_fn: Callable, grid, z: float = 3.0, slack: float = 0.0,
                       name: str = "tail") -> list[ComparisonReport]:
    """Empirical P(all coordinates >= s) against tail_fn(s) with Wilson z-bands (+ slack)."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1 and np.ndim(samples) == 1:
        X = X.T
    n = X.shape[0]
    out = []
    for s in grid:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        hits = int(np.all(X >= s, axis=1).sum())
        lo, hi = wilson_interval(hits, n, z)
        ref = float(tail_fn(s))
        ok = lo - slack <= ref <= hi + slack
        out.append(ComparisonReport(f"{name}{tuple(np.round(s, 6).tolist())}", n, hits / n, ref,
                                    "3sigma" if z == 3 else f"{z}sigma", max(hi - hits / n, hits / n - lo) + slack,
                                    ok))
    return out


def two_sample_tail_compare(a, b, grid, z: float = 3.0, name: str = "tail2") -> list[ComparisonReport]:
    """Grid tails of two samples; difference within z pooled binomial standard errors."""
    A = np.atleast_2d(np.asarray(a, dtype=float))
    B = np.atleast_2d(np.asarray(b, dtype=float))
    out = []
    for s in grid:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        pa = float(np.all(A >= s, axis=1).mean())
        pb = float(np.all(B >= s, axis=1).mean())
        p = (pa * A.shape[0] + pb * B.shape[0]) / (A.shape[0] + B.shape[0])
        se = math.sqrt(max(p * (1 - p), 1e-300) * (1 / A.shape[0] + 1 / B.shape[0]))
        out.append(ComparisonReport(f"{name}{tuple(np.round(s, 6).tolist())}", A.shape[0], pa, pb,
                                    "3sigma", z * se, abs(pa - pb) <= z * se))
    return out


def mean_report(name: str, values, reference: float, z: float = 3.0, slack: float = 0.0) -> ComparisonReport:
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    half = z * float(v.std(ddof=1)) / math.sqrt(v.size) + slack
    return ComparisonReport(name, v.size, m, reference, "3sigma", half, abs(m - reference) <= half)


def frequency_report(name: str, hits: int, n: int, p: float, z: float = 3.0) -> ComparisonReport:
    lo, hi = wilson_interval(hits, n, z)
    return ComparisonReport(name, n, hits / n, p, "3sigma", (hi - lo) / 2, lo <= p <= hi)


# ---------------------------------------------------------------- chi-square

def merge_cells(observed, expected, min_expected: float = 5.0):
    """Merge adjacent cells (in order of increasing expectation) until each has >= min_expected."""
    obs = [float(x) for x in observed]
    exp = [float(x) for x in expected]
    merged = False
    while len(exp) > 1 and min(exp) < min_expected:
        i = int(np.argmin(exp))
        j = i + 1 if i + 1 < len(exp) else i - 1
        if j < i:
            i, j = j, i
        obs[i] += obs.pop(j)
        exp[i] += exp.pop(j)
        merged = True
    return np.array(obs), np.array(exp), merged


def chi_square_gof(observed, probs, min_expected: float = 5.0) -> tuple[float, int, bool]:
    """(statistic, degrees of freedom, merged?)."""
    obs = np.asarray(observed, dtype=float)
    exp = obs.sum() * np.asarray(probs, dtype=float)
    o, e, merged = merge_cells(obs, exp, min_expected)
    if len(e) < 2:
        return 0.0, 0, merged
    return float(np.sum((o - e) ** 2 / e)), len(e) - 1, merged


def chi_square_report(name: str, observed, probs, alpha: float = 0.01) -> ComparisonReport:
    stat, df, merged = chi_square_gof(observed, probs)
    crit = float(sst.chi2.ppf(1 - alpha, df)) if df > 0 else math.inf
    return ComparisonReport(name, int(np.sum(observed)), stat, float(df), "chi2", crit, stat <= crit,
                            "cells merged" if merged else "")


def _step(P: Partition, Q: Partition):
    """Which block of P split, and the sizes of the pieces; None for non-binary steps."""
    if len(Q) != len(P) + 1:
        return None
    qs = set(Q)
    for j, b in enumerate(P):
        if b not in qs:
            pieces = [c for c in Q if set(c) <= set(b)]
            return j, len(b), tuple(len(c) for c in pieces)
    return None


def topology_counts(chains, k: int):
    """Tally block choices (per block-size configuration) and split sizes (per block size).

    Split sizes are tallied as the smaller piece, so that the count does not depend
    on how the two pieces are ordered.
    """
    choice: dict[tuple[int, ...], np.ndarray] = {}
    sizes: dict[int, np.ndarray] = {}
    skipped = 0
    for chain in chains:
        if chain is None:
            continue
        for P, Q in zip(chain, chain[1:]):
            st = _step(P, Q)
            if st is None:
                skipped += 1
                continue
            j, a, pieces = st
            conf = tuple(len(b) for b in P)
            choice.setdefault(conf, np.zeros(len(conf)))[j] += 1
            sizes.setdefault(a, np.zeros(a // 2 + 1))[min(pieces)] += 1
    return choice, sizes, skipped


def expected_choice(conf: tuple[int, ...], k: int) -> np.ndarray:
    a = np.asarray(conf, dtype=float)
    return (a - 1) / (k - len(conf))


def expected_min_piece(a: int) -> np.ndarray:
    """P(smaller piece = m) when the ordered piece size is uniform on 1..a-1."""
    p = np.zeros(a // 2 + 1)
    for l in range(1, a):
        p[min(l, a - l)] += 1.0 / (a - 1)
    return p


def topology_frequencies(chains, k: int, alpha: float = 0.01) -> list[ComparisonReport]:
    """Chi-square of next-block choices against (a_j-1)/(k-i-1) and split sizes against 1/(a-1)."""
    if k > 6:
        raise ValueError("topology tallies are limited to k <= 6")
    choice, sizes, skipped = topology_counts(chains, k)
    out = []
    for conf in sorted(choice):
        if len(conf) < 2 or all(a == 1 for a in conf):
            continue
        probs = expected_choice(conf, k)
        live = probs > 0
        obs = choice[conf]
        if np.any(obs[~live] > 0):
            out.append(ComparisonReport(f"block-choice{conf}", int(obs.sum()), float(obs[~live].sum()), 0.0,
                                        "chi2", 0.0, False, "a singleton block split"))
            continue
        if live.sum() < 2:
            continue
        out.append(chi_square_report(f"block-choice{conf}", obs[live], probs[live], alpha))
    for a in sorted(sizes):
        if a < 4:
            # a = 2, 3 leave a single unordered size class: nothing to test
            continue
        probs = expected_min_piece(a)
        out.append(chi_square_report(f"split-size[a={a}]", sizes[a][1:], probs[1:], alpha))
    if skipped:
        for r in out:
            r.note = (r.note + f"; {skipped} non-binary steps skipped").lstrip("; ")
    return out


def suite_passes(reports: Sequence[ComparisonReport], fraction: float = 0.95) -> bool:
    if not reports:
        return True
    return sum(r.passed for r in reports) >= fraction * len(reports)
