"""Direct samplers for the near-critical limit genealogy (max-normalised iid construction)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gw_sim import Partition, genealogy_from_coalescence


def sample_X(rng: np.random.Generator, size=None):
    """Draw from the density (1+x)^{-2} by inverting the CDF x/(1+x)."""
    u = rng.random(size)
    return u / (1 - u)


def _times_from_X(X: np.ndarray, mu: float, r: float) -> np.ndarray:
    M = X.max(axis=-1, keepdims=True)
    ratio = X / M
    if mu == 0:
        return 1 - ratio
    rm = r * mu
    return 1 - np.log1p(np.expm1(rm) * ratio) / rm


@dataclass
class LimitTimes:
    times: np.ndarray  # all k values; times[I] == 0
    I: int

    @property
    def splits(self) -> np.ndarray:
        return np.delete(self.times, self.I)


def sample_limit_times(k: int, mu: float, r: float, rng: np.random.Generator) -> LimitTimes:
    if k < 2:
        raise ValueError("k must be >= 2")
    while True:
        X = sample_X(rng, k)
        I = int(np.argmax(X))
        if np.count_nonzero(X == X[I]) == 1:
            break
    T = _times_from_X(X, mu, r)
    T[I] = 0.0
    return LimitTimes(T, I)


def sample_limit_splits(n: int, k: int, mu: float, r: float, rng: np.random.Generator) -> np.ndarray:
    """n independent draws of the k-1 unordered split times, shape (n, k-1)."""
    X = sample_X(rng, (n, k))
    T = _times_from_X(X, mu, r)
    I = np.argmax(X, axis=1)
    keep = np.ones((n, k), dtype=bool)
    keep[np.arange(n), I] = False
    return T[keep].reshape(n, k - 1)


@dataclass
class LimitTree:
    k: int
    times: np.ndarray
    I: int
    U: np.ndarray
    attach: np.ndarray  # attach[I] == -1
    partition_chain: list[Partition]

    @property
    def splits(self) -> np.ndarray:
        return np.delete(self.times, self.I)

    def ancestor(self, i: int, t: float) -> int:
        """Line carrying the ancestor of leaf i at time t."""
        while self.times[i] > t:
            i = int(self.attach[i])
        return i

    def coalescence(self) -> np.ndarray:
        """sigma(i, j): time at which the lineages of leaves i and j separate."""
        k = self.k
        order = np.sort(self.times)
        sig = np.ones((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                for t in order:
                    if self.ancestor(i, t) != self.ancestor(j, t):
                        sig[i, j] = sig[j, i] = t
                        break
        return sig

    def to_json(self) -> dict:
        return {"times": self.times.tolist(), "positions": self.U.tolist(),
                "attachments": self.attach.tolist(), "tallest": self.I}


def build_limit_tree(times: LimitTimes | np.ndarray, rng: np.random.Generator,
                     U: np.ndarray | None = None) -> LimitTree:
    """Attach each line's horizontal segment to the first taller line toward the tallest."""
    if isinstance(times, LimitTimes):
        T = np.asarray(times.times, dtype=float)
    else:
        T = np.asarray(times, dtype=float)
    k = T.size
    I = int(np.argmin(T))
    if U is None:
        U = rng.random(k)
    attach = np.full(k, -1, dtype=np.int64)
    for i in range(k):
        if i == I:
            continue
        lo, hi = sorted((U[i], U[I]))
        # lines strictly between i and the tallest, taller than i (earlier time)
        between = [j for j in range(k) if j != i and lo < U[j] < hi and T[j] < T[i]]
        if between:
            attach[i] = min(between, key=lambda j: abs(U[j] - U[i]))
        else:
            attach[i] = I
    tree = LimitTree(k, T, I, np.asarray(U), attach, [])
    _, _, chain = genealogy_from_coalescence(tree.coalescence())
    tree.partition_chain = chain
    return tree


def consistency_drop(k: int, n: int, mu: float, r: float, rng: np.random.Generator):
    """Split-time samples from (k+1)-trees with a uniformly chosen leaf forgotten.

    Returns an (n, k-1) array to be compared against direct k-sampling.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    out = np.empty((n, k - 1))
    for row in range(n):
        tree = build_limit_tree(sample_limit_times(k + 1, mu, r, rng), rng)
        drop = int(rng.integers(k + 1))
        keep = [i for i in range(k + 1) if i != drop]
        sig = tree.coalescence()[np.ix_(keep, keep)]
        _, unordered, _ = genealogy_from_coalescence(sig, rng)
        out[row] = unordered
    return out


def q_population_decomposition(k: int, sigma2: float, rng: np.random.Generator,
                               size=None, r: float = 1.0):
    """sum_i V_i Gamma_i with V_0 = 1, V_i uniform, Gamma_i ~ Gamma(2, rate 2/(r sigma2))."""
    shape = (() if size is None else (size,) if np.isscalar(size) else tuple(size))
    scale = r * sigma2 / 2
    G = rng.gamma(2.0, scale, shape + (k,))
    V = rng.random(shape + (k,))
    V[..., 0] = 1.0
    return (V * G).sum(axis=-1)


def expected_split_marginal_cdf(mu: float, r: float, s):
    """CDF of a single scaled spine split time in the limit (density proportional to e^{r mu (1-s)})."""
    s = np.asarray(s, dtype=float)
    if mu == 0:
        return s
    rm = r * mu
    return (math.expm1(rm) - np.expm1(rm * (1 - s))) / math.expm1(rm)
