"""Seeded replicate ensembles; results are keyed by replicate index, never by thread."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .gw_sim import (DEFAULT_CAP, AttemptsExhausted, Partition, PopulationCapError,
                     genealogy_from_coalescence)
from .offspring import OffspringLaw
from .rng import SIM, replicate_rng

log = logging.getLogger(__name__)


def default_threads() -> int:
    env = os.environ.get("GWC_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass
class ForwardEnsemble:
    T: float
    ks: tuple[int, ...]
    splits: dict[int, np.ndarray]  # k -> (n, k-1) unordered splits, NaN where N_T < k
    chains: dict[int, list[list[Partition] | None]]
    N_T: np.ndarray
    attempts: np.ndarray

    def conditioned(self, k: int) -> np.ndarray:
        """Rows for which N_T >= k, i.e. a sample conditioned on that event."""
        return self.splits[k][self.N_T >= k]


def _one(law_cdf, rate, T, ks, seed, idx, max_attempts, cap):
    rng = replicate_rng(seed, idx, SIM)
    parent, birth, death, nchild, first, alive, events, attempts, status = K.grow_conditioned(
        law_cdf, rate, T, min(ks), rng, cap, max_attempts)
    if status == K.OVERFLOW:
        raise PopulationCapError(f"replicate {idx}: population cap {cap} exceeded")
    if status == K.EXHAUSTED:
        raise AttemptsExhausted(int(attempts), min(ks))
    out = {}
    for k in ks:
        if alive >= k:
            leaves = K.sample_leaves(death, nchild, T, k, rng)
            sig = K.coalescence(parent, death, T, leaves)
            _, unordered, chain = genealogy_from_coalescence(sig, rng)
            out[k] = (unordered, chain)
    return idx, int(alive), int(attempts), out


def run_conditioned(law: OffspringLaw, T: float, ks, n: int, seed: int, threads: int | None = None,
                    start: int = 0, max_attempts: int = 10_000_000, cap: int = DEFAULT_CAP,
                    keep_chains: bool = True) -> ForwardEnsemble:
    """n trees conditioned on N_T >= min(ks); each k in ks is sampled where N_T >= k."""
    ks = tuple(sorted(int(k) for k in np.atleast_1d(ks)))
    threads = threads or default_threads()
    cdf = law.cdf()
    splits = {k: np.full((n, k - 1), np.nan) for k in ks}
    chains = {k: [None] * n for k in ks}
    NT = np.zeros(n, dtype=np.int64)
    att = np.zeros(n, dtype=np.int64)

    def store(res):
        idx, alive, attempts, out = res
        i = idx - start
        NT[i], att[i] = alive, attempts
        for k, (s, ch) in out.items():
            splits[k][i] = s
            if keep_chains:
                chains[k][i] = ch

    args = (cdf, float(law.rate), float(T), ks, seed)
    if threads == 1:
        for idx in range(start, start + n):
            store(_one(*args, idx, max_attempts, cap))
    else:
        chunk = max(1, n // (threads * 8))
        blocks = [range(a, min(a + chunk, start + n)) for a in range(start, start + n, chunk)]

        def work(rg):
            return [_one(*args, idx, max_attempts, cap) for idx in rg]

        with ThreadPoolExecutor(threads) as ex:
            for res_list in ex.map(work, blocks):
                for res in res_list:
                    store(res)
    log.debug("ensemble T=%g ks=%s n=%d mean attempts %.2f", T, ks, n, att.mean())
    return ForwardEnsemble(float(T), ks, splits, chains, NT, att)


def run_unconditioned_counts(law: OffspringLaw, T: float, n: int, rng: np.random.Generator,
                             cap: int = DEFAULT_CAP) -> np.ndarray:
    out = K.count_alive_many(law.cdf(), float(law.rate), float(T), n, rng, cap)
    if np.any(out < 0):
        raise PopulationCapError(f"population cap {cap} exceeded")
    return out
