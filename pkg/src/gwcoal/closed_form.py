"""Closed-form split-time distributions, limit densities and analytic identities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import integrate

# below this relative gap between arguments the partial-fraction sums lose
# too many digits in double precision, so they are evaluated in mpmath
NEAR_TIE = 1e-3
MP_DPS = 50
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-12


class TieError(ValueError):
    def __init__(self, s, eps):
        self.suggested_eps = eps
        super().__init__(f"tied arguments {list(s)}; use tail_with_ties or perturb by +-{eps:g}")


class QuadratureError(RuntimeError):
    pass


class _Float:
    exp = staticmethod(math.exp)
    expm1 = staticmethod(math.expm1)
    log = staticmethod(math.log)
    log1p = staticmethod(math.log1p)
    num = staticmethod(float)


class _MP:
    exp = staticmethod(mpmath.exp)
    expm1 = staticmethod(mpmath.expm1)
    log = staticmethod(mpmath.log)
    log1p = staticmethod(mpmath.log1p)
    num = staticmethod(mpmath.mpf)


def _check_distinct(s: Sequence[float], scale: float) -> bool:
    """Raise on exact ties; return True if high precision is advisable."""
    s = sorted(float(x) for x in s)
    gaps = [b - a for a, b in zip(s, s[1:])]
    if any(g == 0 for g in gaps):
        raise TieError(s, 1e-7 * scale)
    small = min([s[0]] + gaps) if s else scale
    return small < NEAR_TIE * scale


def _run(fn: Callable, precise: bool, *args):
    if precise:
        with mpmath.workdps(MP_DPS):
            return float(fn(_MP, *args))
    return float(fn(_Float, *args))


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


# ---------------------------------------------------------------- partial fractions

def _pf(L, e, unit: bool):
    e = [L.num(x) for x in e]
    e0, rest = e[0], e[1:]
    prod0 = L.num(1)
    for ei in rest:
        prod0 *= ei / (ei - e0)
    total = prod0 / (1 + e0) if unit else prod0 / e0
    for j, ej in enumerate(rest):
        term = ej / (ej - e0) ** 2
        for i, ei in enumerate(rest):
            if i != j:
                term *= ei / (ei - ej)
        total += term * (L.log((1 + e0) / (1 + ej)) if unit else L.log(e0 / ej))
    return total


def partial_fraction_integral(e: Sequence[float], domain: str = "inf") -> float:
    """Integral of (1+x e_0)^{-2} prod_{j>=1} (1 - 1/(1+x e_j)) over (0,inf) or (0,1)."""
    if domain not in ("inf", "unit"):
        raise ValueError("domain must be 'inf' or 'unit'")
    e = [float(x) for x in e]
    if len(e) < 2 or min(e) <= 0:
        raise ValueError("need at least two positive e values")
    precise = _check_distinct(e, max(e))
    return _run(_pf, precise, e, domain == "unit")


def partial_fraction_quad(e: Sequence[float], domain: str = "inf") -> float:
    """Quadrature reference for partial_fraction_integral."""
    e = np.asarray(e, dtype=float)

    def f(x):
        return np.prod(x * e[1:] / (1 + x * e[1:])) / (1 + x * e[0]) ** 2

    hi = np.inf if domain == "inf" else 1.0
    return _quad(f, 0.0, hi)


def _quad(f, a, b, **kw) -> float:
    val, err = integrate.quad(f, a, b, epsabs=kw.pop("epsabs", QUAD_EPSABS),
                              epsrel=kw.pop("epsrel", QUAD_EPSREL), limit=kw.pop("limit", 200), **kw)
    if not np.isfinite(val):
        raise QuadratureError(f"quadrature failed (estimate {val}, error {err})")
    return val


# ---------------------------------------------------------------- birth-death, finite T

def _bd_noncrit(L, alpha, beta, T, s):
    a, b, T = L.num(alpha), L.num(beta), L.num(T)
    g = b - a
    k = len(s) + 1
    E0 = L.exp(g * T)
    E = [L.exp(g * (T - L.num(x))) for x in s]
    Em1 = [L.expm1(g * (T - L.num(x))) for x in s]
    E0m1 = L.expm1(g * T)
    pref = k * (E0 - a / b) ** k / E0m1 ** (k - 1)
    first = 1 / (E0 - a / b)
    for Ei, Eim1 in zip(E, Em1):
        first *= Eim1 / (Ei - E0)
    total = first
    for j, (Ej, Ejm1) in enumerate(zip(E, Em1)):
        term = Ejm1 / (Ej - E0) ** 2
        for i, (Ei, Eim1) in enumerate(zip(E, Em1)):
            if i != j:
                term *= Eim1 / (Ei - Ej)
        total += term * L.log((b * E0 - a) / (b * Ej - a))
    return pref * total


def bd_joint_tail(alpha: float, beta: float, T: float, s: Sequence[float]) -> float:
    """P(unordered split times >= s) for noncritical birth-death, N_T >= k, unscaled s in (0, T]."""
    s = [float(x) for x in np.atleast_1d(s)]
    if abs(beta - alpha) < 1e-9 * beta:
        raise ValueError("critical parameters: use bd_crit_joint_tail")
    if any(not 0 < x <= T for x in s):
        raise ValueError("split-time arguments must lie in (0, T]")
    precise = _check_distinct(s, T)
    return _clip01(_run(_bd_noncrit, precise, alpha, beta, T, s))


def _bd_crit(L, beta, T, s):
    b = 1 / (L.num(beta) * L.num(T))
    s = [L.num(x) for x in s]
    k = len(s) + 1
    first = 1 / (1 + b)
    for x in s:
        first *= 1 - 1 / x
    total = first
    for j, sj in enumerate(s):
        term = (1 - sj) / sj ** 2
        for i, si in enumerate(s):
            if i != j:
                term *= (1 - si) / (sj - si)
        total += term * L.log((1 + b) / (1 - sj + b))
    return k * (1 + b) ** k * total


def bd_crit_joint_tail(beta: float, T: float, s: Sequence[float]) -> float:
    """P(unordered split times / T >= s) for critical birth-death, N_T >= k, scaled s in (0, 1]."""
    s = [float(x) for x in np.atleast_1d(s)]
    if any(not 0 < x <= 1 for x in s):
        raise ValueError("scaled split-time arguments must lie in (0, 1]")
    precise = _check_distinct(s, 1.0)
    return _clip01(_run(_bd_crit, precise, beta, T, s))


def bd_crit_k2_tail(beta: float, T: float, s):
    """Two-particle critical tail written out explicitly; vectorised over scaled s."""
    s = np.asarray(s, dtype=float)
    b = 1 / (beta * T)
    x = s / (1 + b)
    # -log(1-x) - x, with a series where the subtraction would cancel
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    ser = xs ** 2 / 2 + xs ** 3 / 3 + xs ** 4 / 4 + xs ** 5 / 5
    xl = np.where(small, 0.5, x)
    direct = -np.log1p(-xl) - xl
    bracket = np.where(small, ser, direct)
    ss = np.where(s > 0, s, 1.0)
    out = np.where(s > 0, 2 * (1 + b) ** 2 * ((1 - s) / ss ** 2) * bracket, 1.0)
    return float(out) if out.ndim == 0 else out


def bd_density(alpha: float, beta: float, T: float, s: Sequence[float]) -> float:
    """Density of the unordered split times (unscaled) for birth-death, by quadrature over y."""
    s = np.asarray(s, dtype=float)
    k = s.size + 1
    sj = np.concatenate([[0.0], s])
    crit = abs(beta - alpha) < 1e-9 * beta
    if crit:
        pref = math.factorial(k) * (beta * T + 1) ** k / T ** (k - 1)

        def f(y):
            return (1 - y) ** (k - 1) * np.prod(1.0 / (beta * (1 - y) * (T - sj) + 1) ** 2)
    else:
        g = beta - alpha
        E0 = math.exp(g * T)
        pref = (math.factorial(k) * (beta * E0 - alpha) ** k * g ** (2 * k - 1)
                / (math.expm1(g * T) ** (k - 1) * E0))
        w = np.exp(g * (T - sj))

        def f(y):
            return (1 - y) ** (k - 1) * np.prod(w / (beta * (1 - y) * w + beta * y - alpha) ** 2)
    return pref * _quad(f, 0.0, 1.0) / math.factorial(k - 1)


# ---------------------------------------------------------------- near-critical limits

def _nearcrit(L, r, mu, s):
    s = [L.num(x) for x in s]
    k = len(s) + 1
    if mu == 0:
        first = L.num(k)
        for x in s:
            first *= (x - 1) / x
        total = first
        for j, sj in enumerate(s):
            term = (1 - sj) / sj ** 2
            for i, si in enumerate(s):
                if i != j:
                    term *= (1 - si) / (sj - si)
            total -= k * term * L.log1p(-sj)
        return total
    rm = L.num(r) * L.num(mu)
    E0 = L.expm1(rm)
    E = [L.expm1(rm * (1 - x)) for x in s]
    first = L.num(k)
    for Ei in E:
        first *= Ei / (Ei - E0)
    total = first
    for j, Ej in enumerate(E):
        term = E0 * Ej / (Ej - E0) ** 2
        for i, Ei in enumerate(E):
            if i != j:
                term *= Ei / (Ei - Ej)
        total += k * term * L.log(E0 / Ej)
    return total


def nearcrit_joint_tail(r: float, mu: float, s: Sequence[float], k: int | None = None) -> float:
    """Limit of P(unordered split times / T >= s) in the near-critical regime; s in (0, 1)."""
    s = [float(x) for x in np.atleast_1d(s)]
    if k is not None and k != len(s) + 1:
        raise ValueError(f"expected {k - 1} arguments, got {len(s)}")
    if any(not 0 < x < 1 for x in s):
        raise ValueError("scaled arguments must lie in (0, 1)")
    precise = _check_distinct(s, 1.0)
    return _clip01(_run(_nearcrit, precise, r, mu, s))


def critk2(s):
    """Two-particle critical limit tail 2(s-1)/s^2 (log(1-s) + s)."""
    s = np.asarray(s, dtype=float)
    small = s < 0.05
    x = np.where(small, 0.05, s)
    out = 2 * (x - 1) / x ** 2 * (np.log1p(-x) + x)
    # log(1-s) + s = -sum_{j>=2} s^j / j for small s
    ss = np.where(small, s, 0.0)
    ser = np.zeros_like(ss)
    for j in range(2, 40):
        ser += ss ** j / j
    out = np.where(small, 2 * (1 - ss) * ser / np.where(small, ss, 1.0) ** 2, out)
    return float(out) if out.ndim == 0 else out


def nearcritk2(r: float, mu: float, s: float) -> float:
    """Two-particle near-critical limit tail written out explicitly."""
    if mu == 0:
        return critk2(s)
    e1 = math.exp(r * mu * (1 - s))
    e0 = math.exp(r * mu)
    return (2 * (e1 - 1) / (e1 - e0)
            + 2 * (e0 - 1) * (e1 - 1) / (e1 - e0) ** 2 * math.log((e0 - 1) / (e1 - 1)))


def limit_density(r: float, mu: float, s: Sequence[float]) -> float:
    """Density of the unordered scaled split times in the near-critical limit."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or np.any(s >= 1):
        raise ValueError("arguments must lie in [0, 1)")
    k = s.size + 1
    sj = np.concatenate([[0.0], s])
    if mu == 0:
        pref = float(k)
        a = 1 - sj
        w = np.ones_like(sj)
    else:
        rm = r * mu
        w = np.exp(rm * (1 - sj))
        if mu > 0:
            pref = k * rm ** (k - 1) * (-math.expm1(-rm))
            a = np.expm1(rm * (1 - sj))
        else:
            pref = k * (-1) ** k * rm ** (k - 1) * (-math.expm1(-rm))
            a = -np.expm1(rm * (1 - sj))

    return pref * _theta_integral(k, w, a)


def _theta_integral(k: int, w: np.ndarray, a: np.ndarray, h: float = 0.1) -> float:
    """int_0^inf theta^{k-1} prod_j w_j/(1 + theta a_j)^2 dtheta.

    In x = log(theta) the integrand is analytic in the strip |Im x| < pi and decays like
    e^{-k|x|}, so the trapezoid rule with step h has error of order exp(-2 pi^2 / h).
    """
    x_hi = float(np.log(1 / a.min())) if a.min() < 1 else 0.0
    x = np.arange(-45.0 / k, x_hi + 45.0 / k, h)
    th = np.exp(x)
    logv = k * x + np.sum(np.log(w)) - 2 * np.log1p(np.outer(th, a)).sum(axis=1)
    return float(h * np.exp(logv).sum())


def limit_density_quad(r: float, mu: float, s: Sequence[float]) -> float:
    """Same density by adaptive quadrature over theta (slow; used as a cross-check)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    k = s.size + 1
    sj = np.concatenate([[0.0], s])
    if mu == 0:
        pref, a, w = float(k), 1 - sj, np.ones_like(sj)
    else:
        rm = r * mu
        w = np.exp(rm * (1 - sj))
        a = np.expm1(rm * (1 - sj)) if mu > 0 else -np.expm1(rm * (1 - sj))
        pref = k * (1 if mu > 0 else (-1) ** k) * rm ** (k - 1) * (-math.expm1(-rm))

    def h(th):
        return th ** (k - 1) * np.prod(w / (1 + th * a) ** 2)

    kinks = sorted(float(t) for t in 1 / a if t > 1)
    with mpmath.workdps(30):
        val = mpmath.quad(lambda v: h(float(v)), [0, 1] + kinks + [mpmath.inf])
    return pref * float(val)


def tail_with_ties(tail: Callable[[Sequence[float]], float], s: Sequence[float],
                   scale: float = 1.0) -> float:
    """Evaluate a joint tail at tied arguments by averaging symmetric perturbations."""
    s = np.asarray(s, dtype=float)
    eps = 1e-7 * scale
    offs = (np.arange(s.size) - (s.size - 1) / 2) * eps
    return 0.5 * (tail(list(s + offs)) + tail(list(s - offs)))


# ---------------------------------------------------------------- k = 2 long-time limits

def k2_limits(kind: str, alpha: float, beta: float, s):
    """Two-particle T -> infinity limits for birth-death.

    supercritical_bd: P(S >= s).
    subcritical_bd: P(S >= T - s), with s measured back from T.
    """
    s = np.asarray(s, dtype=float)
    if kind == "supercritical_bd":
        if not beta > alpha:
            raise ValueError("supercritical limit needs beta > alpha")
        x = (beta - alpha) * s
        em = np.exp(-x)
        out = 2 * em / np.expm1(-x) ** 2 * (x + np.expm1(-x))
    elif kind == "subcritical_bd":
        if not alpha > beta:
            raise ValueError("subcritical limit needs alpha > beta")
        E = np.exp((alpha - beta) * s)
        out = (2 * alpha ** 2 / beta ** 2) * np.expm1((alpha - beta) * s) * (
            -E * np.log1p(-beta / (alpha * E)) - beta / alpha)
    else:
        raise ValueError(f"unknown regime {kind!r}")
    return float(out) if out.ndim == 0 else out


def subcritical_k2_distance_tail(alpha: float, beta: float, s):
    """P(T - S >= s) in the subcritical long-time limit."""
    return 1.0 - k2_limits("subcritical_bd", alpha, beta, s)


# ---------------------------------------------------------------- series identities

def athreya_value(s: float, tol: float = 1e-18) -> float:
    """E[phi(G_s)] with phi(j) = 2/(j+1) and G_s geometric, P(G_s=j) = (1-s)s^{j-1}."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    n = int(math.ceil(math.log(tol) / math.log(s))) + 2
    j = np.arange(1, n + 1, dtype=float)
    terms = 2.0 / (j + 1) * (1 - s) * s ** (j - 1)
    return float(math.fsum(terms[::-1]))


def durrett_series(s: float, n_terms: int | None = None) -> float:
    """(1-s)(1 + 2 sum_{j>=1} s^j/(j+2)), truncated after n_terms."""
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    if n_terms is None:
        n_terms = 10 if s == 0 else int(math.ceil(math.log(1e-18) / math.log(s))) + 2
    j = np.arange(1, n_terms + 1, dtype=float)
    return float((1 - s) * (1 + 2 * math.fsum((s ** j / (j + 2))[::-1])))


# ---------------------------------------------------------------- integration identities

def integrate_out_bd(s_j: float, T: float, alpha: float, beta: float, y: float) -> float:
    """Closed form of int_{s_j}^T e^{g(T-s)} / (beta(1-y)e^{g(T-s)} + beta y - alpha)^2 ds."""
    g = beta - alpha
    W = math.exp(g * (T - s_j))
    D = beta * (1 - y) * W + beta * y - alpha
    if abs(g) < 1e-9 * beta:
        # critical limit: integrand 1/(beta(1-y)(T-s)+1)^2
        x = T - s_j
        return x / (beta * (1 - y) * x + 1)
    return math.expm1(g * (T - s_j)) / (g ** 2 * D)


def integrate_out_bd_quad(s_j, T, alpha, beta, y) -> float:
    g = beta - alpha
    if abs(g) < 1e-9 * beta:
        return _quad(lambda s: 1.0 / (beta * (1 - y) * (T - s) + 1) ** 2, s_j, T)

    def f(s):
        W = math.exp(g * (T - s))
        return W / (beta * (1 - y) * W + beta * y - alpha) ** 2

    return _quad(f, s_j, T)


def integrate_out_nearcrit(s_i: float, r: float, mu: float, sigma2: float, phi: float) -> float:
    """Closed form of int_{s_i}^1 e^{r mu(1-s)} / (1 + c phi (e^{r mu (1-s)} - 1))^2 ds, c = sigma2/(2 mu)."""
    x = math.expm1(r * mu * (1 - s_i))
    c = sigma2 / (2 * mu)
    return x / (r * mu * (1 + c * phi * x))


def integrate_out_nearcrit_quad(s_i, r, mu, sigma2, phi) -> float:
    c = sigma2 / (2 * mu)

    def f(s):
        return math.exp(r * mu * (1 - s)) / (1 + c * phi * math.expm1(r * mu * (1 - s))) ** 2

    return _quad(f, s_i, 1.0)


# ---------------------------------------------------------------- reduced tree

def purple_rate(gamma: float, s):
    """Branching rate of the reduced tree at scaled time s."""
    s = np.asarray(s, dtype=float)
    if gamma == 0:
        out = 1.0 / (1 - s)
    else:
        out = gamma / -np.expm1(-gamma * (1 - s))
    return float(out) if out.ndim == 0 else out


def yule_time_change(gamma: float, t):
    t = np.asarray(t, dtype=float)
    if gamma == 0:
        out = -np.log1p(-t)
    else:
        out = np.log(np.expm1(gamma) / np.expm1(gamma * (1 - t)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- batch evaluation

@dataclass(frozen=True)
class CoalescentLaw:
    """Which joint tail to evaluate: 'bd_noncrit', 'bd_crit' or 'near_crit'."""

    kind: str
    k: int
    alpha: float = 0.0
    beta: float = 1.0
    T: float = 1.0
    r: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.kind not in ("bd_noncrit", "bd_crit", "near_crit"):
            raise ValueError(f"unknown law kind {self.kind!r}")

    def tail(self, s) -> float:
        s = list(np.atleast_1d(s))
        if len(s) != self.k - 1:
            raise ValueError(f"need {self.k - 1} coordinates")
        if self.kind == "bd_noncrit":
            return bd_joint_tail(self.alpha, self.beta, self.T, s)
        if self.kind == "bd_crit":
            return bd_crit_joint_tail(self.beta, self.T, s)
        return nearcrit_joint_tail(self.r, self.mu, s)

    def density(self, s) -> float:
        if self.kind == "near_crit":
            return limit_density(self.r, self.mu, s)
        if self.kind == "bd_crit":
            # density of the scaled split times
            return bd_density(self.beta, self.beta, self.T, np.asarray(s) * self.T) * self.T ** (self.k - 1)
        return bd_density(self.alpha, self.beta, self.T, s)

    @property
    def formula(self) -> str:
        return {"bd_noncrit": "birth-death finite-T joint tail (noncritical)",
                "bd_crit": "birth-death finite-T joint tail (critical, scaled)",
                "near_crit": "near-critical scaling-limit joint tail"}[self.kind]
