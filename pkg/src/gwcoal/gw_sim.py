"""Forward simulation of continuous-time Galton-Watson trees and genealogy extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .offspring import OffspringLaw

DEFAULT_CAP = 10_000_000

Partition = tuple[tuple[int, ...], ...]


class PopulationCapError(RuntimeError):
    pass


class AttemptsExhausted(RuntimeError):
    def __init__(self, attempts: int, k: int):
        self.attempts = attempts
        super().__init__(
            f"no tree with >= {k} survivors in {attempts} attempts "
            f"(empirical survival probability < {1.0 / attempts:.3g})")


@dataclass
class GWTree:
    """Arena of particles. Children of particle i are first[i] .. first[i]+nchild[i]-1."""

    T: float
    parent: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    nchild: np.ndarray
    first: np.ndarray
    event_count: int = 0
    censored: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.censored = (self.death >= self.T) & (self.nchild == 0)

    def __len__(self) -> int:
        return self.parent.size

    @property
    def alive_at_T(self) -> np.ndarray:
        return np.flatnonzero(self.censored)

    @property
    def n_alive(self) -> int:
        return int(self.censored.sum())

    def children(self, i: int) -> range:
        f = int(self.first[i])
        return range(f, f + int(self.nchild[i])) if f >= 0 else range(0)

    def ancestors(self, i: int) -> list[int]:
        """Path from i up to the root, inclusive."""
        out = [int(i)]
        p = self.parent
        while p[out[-1]] >= 0:
            out.append(int(p[out[-1]]))
        return out

    def dump(self) -> str:
        lines = [f"{i} {int(self.parent[i])} {float(self.birth[i])!r} {float(self.death[i])!r} {int(self.nchild[i])}"
                 for i in range(len(self))]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(f"# T {float(self.T)!r}\n" + self.dump())

    @classmethod
    def from_records(cls, T: float, records) -> "GWTree":
        """Build from (id, parent, birth, death) rows; ids must be 0..n-1."""
        rec = sorted(records, key=lambda x: x[0])
        n = len(rec)
        parent = np.array([r[1] for r in rec], dtype=np.int64)
        birth = np.array([r[2] for r in rec], dtype=float)
        death = np.array([r[3] for r in rec], dtype=float)
        nchild = np.zeros(n, dtype=np.int64)
        first = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            p = parent[i]
            if p >= 0:
                if first[p] < 0:
                    first[p] = i
                elif i != first[p] + nchild[p]:
                    raise ValueError("children of a particle must have consecutive ids")
                nchild[p] += 1
        return cls(T, parent, birth, death, nchild, first, int((death < T).sum()))

    @classmethod
    def load(cls, path: str | Path) -> "GWTree":
        T = None
        rows = []
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["T"]:
                    T = float(parts[1])
                continue
            if line.strip():
                i, p, b, d, _ = line.split()
                rows.append((int(i), int(p), float(b), float(d)))
        if T is None:
            raise ValueError("tree dump lacks a '# T' header")
        return cls.from_records(T, rows)


def _law_arrays(law: OffspringLaw):
    return law.cdf(), float(law.rate)


def simulate(law: OffspringLaw, T: float, rng: np.random.Generator, cap: int = DEFAULT_CAP) -> GWTree:
    if not T > 0:
        raise ValueError("T must be positive")
    cdf, r = _law_arrays(law)
    bufs = [np.empty(256, np.int64), np.empty(256), np.empty(256), np.empty(256, np.int64),
            np.empty(256, np.int64), np.empty(256, np.int64)]
    parent, birth, death, nchild, first, _, n, _, events, status = K.grow(
        cdf, r, 0.0, T, rng, cap, *bufs)
    if status == K.OVERFLOW:
        raise PopulationCapError(f"population cap {cap} exceeded")
    return GWTree(T, parent[:n].copy(), birth[:n].copy(), death[:n].copy(),
                  nchild[:n].copy(), first[:n].copy(), int(events))


def simulate_conditioned(law: OffspringLaw, T: float, k: int, rng: np.random.Generator,
                         max_attempts: int = 10_000_000, cap: int = DEFAULT_CAP) -> tuple[GWTree, int]:
    """Rejection-sample a tree with N_T >= k. Returns (tree, attempts)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cdf, r = _law_arrays(law)
    parent, birth, death, nchild, first, _, events, attempts, status = K.grow_conditioned(
        cdf, r, T, k, rng, cap, max_attempts)
    if status == K.OVERFLOW:
        raise PopulationCapError(f"population cap {cap} exceeded")
    if status == K.EXHAUSTED:
        raise AttemptsExhausted(int(attempts), k)
    return GWTree(T, parent.copy(), birth.copy(), death.copy(), nchild.copy(), first.copy(),
                  int(events)), int(attempts)


def sample_k_uniform(tree: GWTree, k: int, rng: np.random.Generator) -> np.ndarray:
    alive = tree.alive_at_T
    if alive.size < k:
        raise ValueError(f"only {alive.size} particles alive, cannot sample {k}")
    # ordered draw without replacement; order is forgotten downstream
    return alive[rng.choice(alive.size, size=k, replace=False)]


@dataclass
class SampledGenealogy:
    k: int
    leaves: np.ndarray
    ordered_splits: np.ndarray
    unordered_splits: np.ndarray
    partition_chain: list[Partition]
    coalescence: np.ndarray  # k x k matrix of sigma(u, v); diagonal holds T


def _partition_at(sig: list[list[float]], t: float) -> Partition:
    k = len(sig)
    label = [-1] * k
    blocks: list[tuple[int, ...]] = []
    for i in range(k):
        if label[i] >= 0:
            continue
        label[i] = i
        row = sig[i]
        blk = [i + 1]
        for j in range(i + 1, k):
            if label[j] < 0 and row[j] > t:
                label[j] = i
                blk.append(j + 1)
        blocks.append(tuple(blk))
    return tuple(blocks)


def coalescence_matrix(tree: GWTree, leaves) -> np.ndarray:
    """sigma(u, v): death time of the last common ancestor."""
    k = len(leaves)
    paths = [tree.ancestors(int(x)) for x in leaves]
    sets = [set(p) for p in paths]
    sig = np.full((k, k), tree.T)
    for i in range(k):
        for j in range(i + 1, k):
            a = next(v for v in paths[j] if v in sets[i])
            sig[i, j] = sig[j, i] = tree.death[a]
    return sig


def genealogy_from_coalescence(sig: np.ndarray, rng: np.random.Generator | None = None):
    """Ordered splits, partition chain and unordering from a coalescence matrix."""
    rows = np.asarray(sig).tolist()
    k = len(rows)
    times = sorted({rows[i][j] for i in range(k) for j in range(i + 1, k)})
    chain: list[Partition] = [_partition_at(rows, -np.inf)]
    ordered: list[float] = []
    for t in times:
        P = _partition_at(rows, t)
        ordered.extend([t] * (len(P) - len(chain[-1])))
        chain.append(P)
    ordered_arr = np.array(ordered)
    unordered = rng.permutation(ordered_arr) if rng is not None else ordered_arr.copy()
    return ordered_arr, unordered, chain


def extract_genealogy(tree: GWTree, leaves, rng: np.random.Generator) -> SampledGenealogy:
    leaves = np.asarray(leaves)
    if len(set(leaves.tolist())) != leaves.size:
        raise ValueError("leaves must be distinct")
    if not np.all(tree.censored[leaves]):
        raise ValueError("leaves must be alive at T")
    sig = coalescence_matrix(tree, leaves)
    ordered, unordered, chain = genealogy_from_coalescence(sig, rng)
    return SampledGenealogy(leaves.size, leaves, ordered, unordered, chain, sig)


def encode_partition(P: Partition) -> str:
    sep = "" if sum(len(b) for b in P) < 10 else "."
    return "/".join(sep.join(str(x) for x in b) for b in P)


def encode_chain(chain: list[Partition]) -> str:
    return ">".join(encode_partition(P) for P in chain)


def decode_chain(code: str) -> list[Partition]:
    # the first partition is a single block, so a dot anywhere marks k >= 10
    dotted = "." in code
    out = []
    for part in code.split(">"):
        blocks = [tuple(int(x) for x in (b.split(".") if dotted else b)) for b in part.split("/")]
        out.append(tuple(blocks))
    return out
