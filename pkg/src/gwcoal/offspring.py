"""Offspring laws: moments, generating functions and (size-biased) sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

PMF_TOL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring law together with its branching rate ``r``."""

    pmf: tuple[float, ...]
    rate: float
    kind: str = "explicit"
    params: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("pmf must be a non-empty vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"pmf entries must lie in [0, 1]: {self.pmf}")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf sums to {p.sum()!r}, not 1")
        p01 = p[0] + (p[1] if p.size > 1 else 0.0)
        if p01 >= 1.0:
            raise ValueError("offspring law must satisfy p_0 + p_1 < 1")
        if not self.rate > 0:
            raise ValueError("branching rate must be positive")
        object.__setattr__(self, "pmf", tuple(float(x) for x in p))

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.pmf)

    @property
    def support_bound(self) -> int:
        return len(self.pmf) - 1

    @property
    def mean(self) -> float:
        return mean(self)

    def factorial_moment(self, j: int) -> float:
        return factorial_moment(self, j)

    def pgf(self, theta):
        return pgf(self, theta)

    def u(self, theta):
        return u(self, theta)

    def size_biased_pmf(self) -> np.ndarray:
        j = np.arange(len(self.pmf))
        w = j * self.p
        return w / w.sum()

    def cdf(self) -> np.ndarray:
        return _cdf(self.p)

    def size_biased_cdf(self) -> np.ndarray:
        return _cdf(self.size_biased_pmf())

    def to_json(self) -> dict[str, Any]:
        if self.kind == "explicit":
            return {"kind": "explicit", "params": {"pmf": list(self.pmf), "r": self.rate}}
        return {"kind": self.kind, "params": dict(self.params)}


def _cdf(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p)
    c[-1] = 1.0
    return c


def mean(law: OffspringLaw) -> float:
    return float(np.dot(np.arange(len(law.pmf)), law.p))


def factorial_moment(law: OffspringLaw, j: int) -> float:
    """E[L(L-1)...(L-j+1)]; zero once j exceeds the support bound."""
    if j < 1:
        raise ValueError("j must be >= 1")
    i = np.arange(len(law.pmf), dtype=float)
    falling = np.ones_like(i)
    for d in range(j):
        falling *= i - d
    return float(np.dot(falling, law.p))


def pgf(law: OffspringLaw, theta, eps: float = 1e-9):
    th = np.asarray(theta, dtype=float)
    if np.any(th < -eps) or np.any(th > 1 + eps):
        raise ValueError(f"theta outside [0, 1]: {theta}")
    # Horner from the top coefficient
    out = np.zeros_like(th)
    for c in reversed(law.pmf):
        out = out * th + c
    return out if out.ndim else float(out)


def u(law: OffspringLaw, theta, eps: float = 1e-9):
    return pgf(law, theta, eps) - np.asarray(theta, dtype=float)


def sample(law: OffspringLaw, rng: np.random.Generator, size=None):
    return rng.choice(len(law.pmf), size=size, p=law.p)


def sample_size_biased(law: OffspringLaw, rng: np.random.Generator, size=None):
    return rng.choice(len(law.pmf), size=size, p=law.size_biased_pmf())


def birth_death(alpha: float, beta: float) -> OffspringLaw:
    """Binary splitting at rate beta, death at rate alpha."""
    if beta <= 0 or alpha < 0:
        raise ValueError("need beta > 0 and alpha >= 0")
    r = alpha + beta
    return OffspringLaw((alpha / r, 0.0, beta / r), r, "bd", {"alpha": alpha, "beta": beta})


def explicit(pmf, r: float) -> OffspringLaw:
    return OffspringLaw(tuple(pmf), r)


def near_critical_ternary(r: float, mu: float, sigma2: float, T: float) -> OffspringLaw:
    """Law on {0,1,2} with mean exactly 1 + mu/T and E[L(L-1)] = sigma2.

    When 1 + mu/T - sigma2 < 0 (e.g. sigma2 = 1, mu < 0) the pmf on {0,1,2} does not
    exist; the smallest mass eps on 3 that restores p1 >= 0 is added instead. Both
    moments stay exact and the third factorial moment 6*eps is O(1/T).
    """
    eps = max(0.0, (sigma2 - 1 - mu / T) / 3)
    p3 = eps
    p2 = sigma2 / 2 - 3 * eps
    p1 = max(0.0, 1 + mu / T - sigma2 + 3 * eps)
    p0 = sigma2 / 2 - mu / T - eps
    pmf = (p0, p1, p2) + ((p3,) if p3 > 0 else ())
    if min(pmf) < 0 or max(pmf) > 1 or eps > 0.05:
        raise ValueError(f"(mu={mu}, sigma2={sigma2}, T={T}) gives an invalid pmf")
    return OffspringLaw(pmf, r, "near_critical_ternary",
                        {"r": r, "mu": mu, "sigma2": sigma2, "T": T})


@dataclass(frozen=True)
class OffspringFamily:
    """A law that may depend on the horizon T (only the ternary family does)."""

    kind: str
    params: dict[str, Any]

    def resolve(self, T: float) -> OffspringLaw:
        p = self.params
        if self.kind == "bd":
            return birth_death(p["alpha"], p["beta"])
        if self.kind == "explicit":
            return explicit(p["pmf"], p["r"])
        if self.kind == "near_critical_ternary":
            return near_critical_ternary(p["r"], p["mu"], p["sigma2"], T)
        raise ValueError(f"unknown offspring family {self.kind!r}")

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "OffspringFamily":
        kind = obj.get("kind")
        params = dict(obj.get("params", {}))
        need = {"bd": {"alpha", "beta"}, "explicit": {"pmf", "r"},
                "near_critical_ternary": {"r", "mu", "sigma2"}}
        if kind not in need:
            raise ValueError(f"unknown offspring family {kind!r}")
        missing = need[kind] - params.keys()
        if missing:
            raise ValueError(f"{kind} law missing params {sorted(missing)}")
        params.pop("T", None)
        return cls(kind, params)


def law_from_json(obj: dict[str, Any], T: float | None = None) -> OffspringLaw:
    fam = OffspringFamily.from_json(obj)
    if fam.kind == "near_critical_ternary" and T is None:
        T = obj["params"].get("T")
        if T is None:
            raise ValueError("near_critical_ternary needs a horizon T")
    return fam.resolve(T)
