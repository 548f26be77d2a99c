"""Generating functions, extinction probabilities and descending moments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .offspring import OffspringLaw

RTOL = 1e-10
ATOL = 1e-12
CRIT_TOL = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class BDParams:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0 or self.alpha < 0:
            raise ValueError("need beta > 0 and alpha >= 0")

    @property
    def r(self) -> float:
        return self.alpha + self.beta

    @property
    def gamma(self) -> float:
        return self.beta - self.alpha

    @property
    def critical(self) -> bool:
        return abs(self.beta - self.alpha) < CRIT_TOL * self.beta


def _pq(p: BDParams, t):
    t = np.asarray(t, dtype=float)
    a, b = p.alpha, p.beta
    if p.critical:
        x = b * t / (b * t + 1)
        return x, x
    # e^{g t} - 1 via expm1 keeps small t accurate
    em1 = np.expm1(p.gamma * t)
    denom = b * em1 + (b - a)
    return a * em1 / denom, b * em1 / denom


def bd_extinction(p: BDParams, t):
    """P(N_t = 0)."""
    pt, _ = _pq(p, t)
    return _scalar(pt)


def bd_q(p: BDParams, t):
    _, qt = _pq(p, t)
    return _scalar(qt)


def bd_pgf(p: BDParams, theta, t):
    th = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    a, b = p.alpha, p.beta
    if p.critical:
        x = (1 - th) * b * t
        return _scalar((x + th) / (x + 1))
    E = np.exp(p.gamma * t)
    return _scalar((a * (1 - th) * E + b * th - a) / (b * (1 - th) * E + b * th - a))


def bd_pmf(p: BDParams, j: int, t):
    pt, qt = _pq(p, t)
    if j == 0:
        return _scalar(pt)
    return _scalar((1 - pt) * (1 - qt) * qt ** (j - 1))


def bd_tail(p: BDParams, k: int, t):
    """P(N_t >= k)."""
    if k <= 0:
        return 1.0
    pt, qt = _pq(p, t)
    return _scalar((1 - pt) * qt ** (k - 1))


def bd_descending_moment(p: BDParams, k: int, t):
    """E[N_t (N_t - 1) ... (N_t - k + 1)]."""
    t = np.asarray(t, dtype=float)
    b = p.beta
    if p.critical:
        return _scalar(math.factorial(k) * (b * t) ** (k - 1))
    g = p.gamma
    return _scalar(math.factorial(k) * (b / g) ** (k - 1) * np.exp(g * t) * np.expm1(g * t) ** (k - 1))


def bd_conditioned_moment(p: BDParams, k: int, t):
    """E[N_t^{(k)}] / P(N_t >= k)."""
    t = np.asarray(t, dtype=float)
    b = p.beta
    if p.critical:
        return _scalar(math.factorial(k) * (b * t + 1) ** k)
    g = p.gamma
    return _scalar(math.factorial(k) * ((b * np.exp(g * t) - p.alpha) / g) ** k)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def backward_F(law: OffspringLaw, theta0, t: float, rtol: float = RTOL, atol: float = ATOL):
    """F(theta0, t) = E[theta0^{N_t}] from dF/dt = r u(F), F(., 0) = identity."""
    th = np.atleast_1d(np.asarray(theta0, dtype=float))
    if np.any(th < 0) or np.any(th > 1):
        raise ValueError("theta0 must lie in [0, 1]")
    if t == 0:
        return _scalar(th if np.ndim(theta0) else th[0])
    r = law.rate
    coef = np.asarray(law.pmf)

    def rhs(_, F):
        Fc = np.clip(F, 0.0, 1.0)
        return r * (np.polyval(coef[::-1], Fc) - Fc)

    sol = solve_ivp(rhs, (0.0, t), th, method="RK45", rtol=rtol, atol=atol)
    if not sol.success:
        raise SolverError(f"backward equation failed after {sol.nfev} evaluations: {sol.message}")
    out = sol.y[:, -1]
    return _scalar(out if np.ndim(theta0) else out[0])


def extinction(law: OffspringLaw, t: float) -> float:
    return backward_F(law, 0.0, t)


def survival_scaled(law: OffspringLaw, s: float, T: float) -> float:
    """T * P(N_{sT} > 0)."""
    return T * (1.0 - backward_F(law, 0.0, s * T))


def survival_limit(mu: float, sigma2: float, r: float, s: float) -> float:
    if mu == 0:
        return 2.0 / (r * sigma2 * s)
    x = mu * r * s
    return 2 * mu / (sigma2 * -math.expm1(-x))


def scaled_moment_limit(k: int, mu: float, sigma2: float, r: float, s: float) -> float:
    """Limit of E_T[N_{sT}^{(k)}] / T^{k-1}."""
    if mu == 0:
        return math.factorial(k) * (r * sigma2 * s / 2) ** (k - 1)
    x = r * mu * s
    return (sigma2 / (2 * mu)) ** (k - 1) * math.factorial(k) * math.exp(x) * math.expm1(x) ** (k - 1)


@dataclass
class MomentCurve:
    """Descending moments M_1..M_k on a time grid, with dense RK interpolation."""

    k: int
    t: np.ndarray
    values: np.ndarray  # shape (k, len(t)); row j-1 holds M_j
    _dense: object = None

    def __call__(self, j: int, t):
        """M_j(t) from the solver's continuous extension."""
        if not 1 <= j <= self.k:
            raise ValueError("order out of range")
        tt = np.asarray(t, dtype=float)
        if self._dense is None:
            return np.interp(tt, self.t, self.values[j - 1])
        v = self._dense(np.atleast_1d(tt).ravel())[j - 1]
        return _scalar(v.reshape(np.shape(tt)))

    def to_csv_rows(self, j: int | None = None):
        j = self.k if j is None else j
        return [(float(a), float(b)) for a, b in zip(self.t, self.values[j - 1])]


def moment_ode(law: OffspringLaw, k: int, t_max: float, n_grid: int = 401,
               rtol: float = RTOL, atol: float = ATOL) -> MomentCurve:
    """Solve the coupled linear system for M_1..M_k with M_1(0)=1, M_j(0)=0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    r = law.rate
    m = law.mean
    fm = [0.0, 0.0] + [law.factorial_moment(j) for j in range(2, k + 1)]
    A = np.zeros((k, k))
    for kk in range(1, k + 1):
        A[kk - 1, kk - 1] = kk * r * (m - 1)
        for j in range(2, kk + 1):
            A[kk - 1, kk - j] += r * math.comb(kk, j) * fm[j]
    y0 = np.zeros(k)
    y0[0] = 1.0
    grid = np.linspace(0.0, t_max, n_grid)
    sol = solve_ivp(lambda _, y: A @ y, (0.0, t_max), y0, method="RK45",
                    t_eval=grid, rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise SolverError(f"moment system failed after {sol.nfev} evaluations: {sol.message}")
    return MomentCurve(k, sol.t, sol.y, sol.sol)


def small_population_probs(law: OffspringLaw, t: float, n: int) -> np.ndarray:
    """P(N_t = j) for j < n via the backward equation on truncated power series."""
    r = law.rate
    p = np.asarray(law.pmf)

    def compose(c):
        # Taylor coefficients (degree < n) of sum_l p_l F^l
        out = np.zeros(n)
        power = np.zeros(n)
        power[0] = 1.0
        for pl in p:
            out += pl * power
            power = np.convolve(power, c)[:n]
        return out

    c0 = np.zeros(n)
    if n > 1:
        c0[1] = 1.0
    sol = solve_ivp(lambda _, c: r * (compose(c) - c), (0.0, t), c0, method="RK45",
                    rtol=RTOL, atol=ATOL)
    if not sol.success:
        raise SolverError(sol.message)
    return sol.y[:, -1]
