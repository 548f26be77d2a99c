"""k-spine sampling under the size-biased measure Q^{k,T} and change-of-measure checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from . import _kernels as K
from . import genfun
from .genfun import BDParams
from .gw_sim import DEFAULT_CAP, Partition, PopulationCapError
from .offspring import OffspringLaw, birth_death


@dataclass
class SplitEvent:
    time: float
    block: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    l: int

    @property
    def n(self) -> int:
        return len(self.children)


@dataclass
class SpineSkeleton:
    k: int
    T: float
    events: list[SplitEvent]

    @property
    def psi(self) -> np.ndarray:
        """Split times with multiplicity n - 1 per event, sorted."""
        out = []
        for ev in self.events:
            out.extend([ev.time] * (ev.n - 1))
        return np.array(sorted(out))

    @property
    def chain(self) -> list[Partition]:
        blocks = [tuple(range(1, self.k + 1))]
        chain = [_canon(blocks)]
        for ev in sorted(self.events, key=lambda e: e.time):
            blocks = [b for b in blocks if b != ev.block] + list(ev.children)
            chain.append(_canon(blocks))
        return chain

    def segments(self) -> list[tuple[float, float, tuple[int, ...]]]:
        """(start, end, block) for every spine-carrying lineage segment."""
        split_at = {ev.block: ev.time for ev in self.events}
        born = {tuple(range(1, self.k + 1)): 0.0}
        for ev in self.events:
            for c in ev.children:
                born[c] = ev.time
        return [(t0, split_at.get(b, self.T), b) for b, t0 in born.items()]

    def residues(self) -> list[tuple[float, int]]:
        return [(ev.time, ev.l - ev.n) for ev in self.events if ev.l > ev.n]


def _canon(blocks) -> Partition:
    return tuple(sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0]))


# ---------------------------------------------------------------- birth-death skeletons

def bd_split_time_cdf(p: BDParams, T: float, s):
    s = np.asarray(s, dtype=float)
    if p.critical:
        return s / T
    g = p.gamma
    return (math.expm1(g * T) - np.expm1(g * (T - s))) / math.expm1(g * T)


def sample_bd_split_times(p: BDParams, T: float, rng: np.random.Generator, size) -> np.ndarray:
    """iid draws from the density proportional to e^{(beta-alpha)(T-s)} on [0, T]."""
    u = rng.random(size)
    if p.critical:
        return u * T
    g = p.gamma
    return T - np.log1p((1 - u) * math.expm1(g * T)) / g


def _binary_topology(k: int, times: np.ndarray, rng: np.random.Generator) -> list[SplitEvent]:
    blocks = [tuple(range(1, k + 1))]
    events = []
    for i, t in enumerate(times):
        sizes = np.array([len(b) for b in blocks], dtype=float)
        j = rng.choice(len(blocks), p=(sizes - 1) / (k - i - 1))
        b = blocks[j]
        a = len(b)
        l = int(rng.integers(1, a))
        perm = rng.permutation(a)
        left = tuple(sorted(b[x] for x in perm[:l]))
        right = tuple(sorted(b[x] for x in perm[l:]))
        events.append(SplitEvent(float(t), b, (left, right), 2))
        blocks = blocks[:j] + blocks[j + 1:] + [left, right]
        blocks = list(_canon(blocks))
    return events


def sample_skeleton_bd(k: int, T: float, p: BDParams, rng: np.random.Generator) -> SpineSkeleton:
    if k < 1:
        raise ValueError("k must be >= 1")
    times = np.sort(sample_bd_split_times(p, T, rng, k - 1))
    return SpineSkeleton(k, T, _binary_topology(k, times, rng))


# ---------------------------------------------------------------- general skeletons

def _metzler_expm(A: np.ndarray, dt: float) -> np.ndarray:
    """exp(A dt) for A with nonnegative off-diagonal, free of cancellation."""
    c = max(0.0, -float(np.min(np.diag(A))))
    B = (A + c * np.eye(A.shape[0])) * dt
    nb = np.abs(B).sum(axis=1).max()
    sq = max(0, int(math.ceil(math.log2(nb))) + 1) if nb > 0.5 else 0
    B = B / 2 ** sq
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for n in range(1, 40):
        term = term @ B / n
        out = out + term
        if term.max() <= 1e-18 * out.max():
            break
    for _ in range(sq):
        out = out @ out
    return out * math.exp(-c * dt)


def moment_matrix(law: OffspringLaw, k: int) -> np.ndarray:
    r, m = law.rate, law.mean
    A = np.zeros((k, k))
    for kk in range(1, k + 1):
        A[kk - 1, kk - 1] = kk * r * (m - 1)
        for j in range(2, kk + 1):
            A[kk - 1, kk - j] += r * math.comb(kk, j) * law.factorial_moment(j)
    return A


@lru_cache(maxsize=None)
def set_partitions(a: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All set partitions of range(a) with at least two blocks."""
    out = []

    def rec(i, blocks):
        if i == a:
            if len(blocks) >= 2:
                out.append(tuple(tuple(b) for b in blocks))
            return
        for b in blocks:
            b.append(i)
            rec(i + 1, blocks)
            b.pop()
        blocks.append([i])
        rec(i + 1, blocks)
        blocks.pop()

    rec(0, [])
    return tuple(out)


class SkeletonSampler:
    """Sequential sampler of the spine skeleton for a general finite-support law.

    Tabulates log H_a(tau) = log M_a(tau) - (m-1) r tau on a log-spaced grid of
    remaining times; the survival of a block's first split is a ratio of H values
    and is inverted by monotone cubic interpolation.
    """

    def __init__(self, law: OffspringLaw, T: float, k: int, n_grid: int = 4000):
        self.law, self.T, self.k = law, float(T), int(k)
        self.r, self.m = law.rate, law.mean
        A = moment_matrix(law, k)
        tau = np.geomspace(T * 1e-12, T, n_grid)
        M = np.empty((k, n_grid))
        y = _metzler_expm(A, tau[0])[:, 0]
        M[:, 0] = y
        for i in range(1, n_grid):
            y = _metzler_expm(A, tau[i] - tau[i - 1]) @ y
            M[:, i] = y
        self.tau = tau
        self.M = M
        self.logM = np.log(np.maximum(M, 1e-300))
        self._logtau_of = {}
        self._logM_of = {}
        for a in range(1, k + 1):
            logH = self.logM[a - 1] - (self.m - 1) * self.r * tau
            self._logM_of[a] = PchipInterpolator(np.log(tau), self.logM[a - 1])
            if a >= 2:
                if np.any(np.diff(logH) <= 0):
                    raise RuntimeError("split survival table is not monotone")
                self._logtau_of[a] = (PchipInterpolator(logH, np.log(tau)), logH)
        self.desc = [0.0] + [law.factorial_moment(n) for n in range(1, k + 1)]
        p = law.p
        ls = np.arange(p.size)
        self._l_given_n = {}
        for n in range(2, k + 1):
            w = p * np.array([math.perm(int(l), n) for l in ls], dtype=float)
            self._l_given_n[n] = w / w.sum() if w.sum() > 0 else None

    def M_at(self, a: int, tau: float) -> float:
        if a == 1:
            return math.exp((self.m - 1) * self.r * tau)
        if tau <= self.tau[0]:
            return float(np.exp(self.logM[a - 1, 0]) * (tau / self.tau[0]) ** (a - 1))
        return float(np.exp(self._logM_of[a](math.log(tau))))

    def log_H(self, a: int, tau: float) -> float:
        return math.log(self.M_at(a, tau)) - (self.m - 1) * self.r * tau

    def draw_split_time(self, a: int, t0: float, u: float) -> float:
        """Time of the first split of an a-block created at t0, from a uniform u."""
        interp, logH = self._logtau_of[a]
        tau0 = self.T - t0
        target = math.log(u) + self.log_H(a, tau0)
        if target <= logH[0]:
            # below the table: H_a ~ c tau^{a-1}
            tau = self.tau[0] * math.exp((target - logH[0]) / (a - 1))
        else:
            tau = math.exp(float(interp(target)))
        return min(max(self.T - tau, t0), self.T)

    def split_weights(self, a: int, t: float):
        tau = self.T - t
        parts = set_partitions(a)
        w = np.empty(len(parts))
        for i, P in enumerate(parts):
            n = len(P)
            if n > self.law.support_bound:
                w[i] = 0.0
                continue
            w[i] = self.desc[n] * math.prod(self.M_at(len(b), tau) for b in P)
        return parts, w

    def sample(self, rng: np.random.Generator) -> SpineSkeleton:
        k = self.k
        root = tuple(range(1, k + 1))
        pending = []  # (split time, block)
        events: list[SplitEvent] = []
        if k >= 2:
            pending.append((self.draw_split_time(k, 0.0, rng.random()), root))
        while pending:
            pending.sort()
            t, block = pending.pop(0)
            parts, w = self.split_weights(len(block), t)
            P = parts[rng.choice(len(parts), p=w / w.sum())]
            n = len(P)
            l = int(rng.choice(self.law.p.size, p=self._l_given_n[n]))
            children = tuple(tuple(block[x] for x in b) for b in P)
            events.append(SplitEvent(float(t), block, children, l))
            for c in children:
                if len(c) >= 2:
                    pending.append((self.draw_split_time(len(c), t, rng.random()), c))
        events.sort(key=lambda e: e.time)
        return SpineSkeleton(k, self.T, events)


_SAMPLERS: dict = {}


def sample_skeleton_general(k: int, T: float, law: OffspringLaw, rng: np.random.Generator) -> SpineSkeleton:
    key = (law.pmf, law.rate, float(T), int(k))
    if key not in _SAMPLERS:
        _SAMPLERS[key] = SkeletonSampler(law, T, k)
    return _SAMPLERS[key].sample(rng)


# ---------------------------------------------------------------- immigration

@dataclass
class SegmentImmigration:
    start: float
    end: float
    birth_times: list[float]
    sizes: list[int]
    populations: list[int]


@dataclass
class ImmigrationLedger:
    k: int
    segments: list[SegmentImmigration]
    residue: list[tuple[float, int, list[int]]]  # (time, count, populations)

    @property
    def ordinary(self) -> int:
        return sum(sum(s.populations) for s in self.segments)

    @property
    def residue_total(self) -> int:
        return sum(sum(p) for _, _, p in self.residue)

    @property
    def N_T(self) -> int:
        return self.k + self.ordinary + self.residue_total

    @property
    def births(self) -> int:
        return sum(len(s.birth_times) for s in self.segments)


def immigrate(skel: SpineSkeleton, law: OffspringLaw, rng: np.random.Generator,
              cap: int = DEFAULT_CAP) -> ImmigrationLedger:
    cdf = law.cdf()
    sb = law.size_biased_cdf()
    r, m, T = law.rate, law.mean, skel.T
    segs = []
    for a, b, _ in skel.segments():
        times, sizes, pops = [], [], []
        t = a + rng.exponential(1 / (m * r))
        while t < b:
            J = K.draw_index(sb, rng.random())
            times.append(float(t))
            sizes.append(int(J))
            for _ in range(J - 1):
                c = K.count_alive(cdf, r, t, T, rng, cap)
                if c < 0:
                    raise PopulationCapError("population cap exceeded during immigration")
                pops.append(int(c))
            t += rng.exponential(1 / (m * r))
        segs.append(SegmentImmigration(a, b, times, sizes, pops))
    res = []
    for t, cnt in skel.residues():
        res.append((t, cnt, [int(K.count_alive(cdf, r, t, T, rng, cap)) for _ in range(cnt)]))
    return ImmigrationLedger(skel.k, segs, res)


def immigrate_totals(skel: SpineSkeleton, law: OffspringLaw, rng: np.random.Generator,
                     cap: int = DEFAULT_CAP, size_biased: bool = True) -> tuple[int, int]:
    """Fast path returning (ordinary population, residue population) at T.

    size_biased=False draws off-spine litters from the plain law; it exists only as a
    fault injection for negative controls.
    """
    seg = skel.segments()
    starts = np.array([s[0] for s in seg])
    ends = np.array([s[1] for s in seg])
    cdf = law.cdf()
    pop, _, _ = K.immigrate_segments(starts, ends, cdf, law.size_biased_cdf() if size_biased else cdf,
                                     law.rate, law.mean, skel.T, rng, cap)
    if pop < 0:
        raise PopulationCapError("population cap exceeded during immigration")
    res = 0
    for t, cnt in skel.residues():
        for _ in range(cnt):
            res += K.count_alive(cdf, law.rate, t, skel.T, rng, cap)
    return int(pop), int(res)


# ---------------------------------------------------------------- Campbell formula

def _F(law: OffspringLaw, x: float, tau: float) -> float:
    if law.kind == "bd":
        return genfun.bd_pgf(BDParams(law.params["alpha"], law.params["beta"]), x, tau)
    return genfun.backward_F(law, x, tau)


def campbell_formula(skel: SpineSkeleton, law: OffspringLaw, z: float) -> float:
    """Q[exp(-z * ordinary population) | skeleton], product over spine segments."""
    if z == 0:
        return 1.0
    x = math.exp(-z)
    r, m, T = law.rate, law.mean, skel.T
    out = 1.0
    for a, b, _ in skel.segments():
        ua = law.u(_F(law, x, T - a))
        ub = law.u(_F(law, x, T - b)) if b < T else law.u(x)
        out *= math.exp(-r * (m - 1) * (b - a)) * ua / ub
    return out


def campbell_product(psi, T: float, law: OffspringLaw, z: float) -> float:
    """Binary-skeleton form: prod over psi_0 = 0, psi_1..psi_{k-1}."""
    x = math.exp(-z)
    r, m = law.rate, law.mean
    out = 1.0
    for p in np.concatenate([[0.0], np.asarray(psi, dtype=float)]):
        out *= math.exp(-r * (m - 1) * (T - p)) * law.u(_F(law, x, T - p)) / law.u(x)
    return out


def bd_q_laplace(p: BDParams, T: float, psi, z: float) -> float:
    """Q[exp(-z N_T) | split times] for birth-death, including the k spines."""
    a, b, g = p.alpha, p.beta, p.gamma
    x = math.exp(-z)
    s = np.concatenate([[0.0], np.asarray(psi, dtype=float)])
    k = s.size
    if p.critical:
        terms = 1.0 / (b * (1 - x) * (T - s) + 1) ** 2
    else:
        terms = (g / (b * (1 - x) * np.exp(g * (T - s)) + b * x - a)) ** 2
    return x ** k * float(np.prod(terms))


# ---------------------------------------------------------------- reports

@dataclass
class Report:
    identity: str
    lhs: float
    lhs_ci: float
    rhs: float
    rhs_ci: float
    passed: bool
    note: str = ""

    def __post_init__(self) -> None:
        self.lhs, self.lhs_ci, self.rhs, self.rhs_ci = map(float, (self.lhs, self.lhs_ci, self.rhs, self.rhs_ci))
        self.passed = bool(self.passed)

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _agree(lhs, lhs_ci, rhs, rhs_ci, abs_tol=0.0) -> bool:
    # ci fields are 3-sigma half-widths; combine in quadrature
    return abs(lhs - rhs) <= math.hypot(lhs_ci, rhs_ci) + abs_tol


def campbell_check(law: OffspringLaw, skeletons: list[SpineSkeleton], z_grid, n_imm: int,
                   rng: np.random.Generator, size_biased: bool = True) -> list[Report]:
    """Per skeleton and z: MC mean of exp(-z * ordinary) vs the product formula."""
    out = []
    for si, skel in enumerate(skeletons):
        pops = np.array([immigrate_totals(skel, law, rng, size_biased=size_biased)[0]
                         for _ in range(n_imm)], dtype=float)
        for z in z_grid:
            v = np.exp(-z * pops)
            lhs = float(v.mean())
            ci = 3 * float(v.std(ddof=1)) / math.sqrt(n_imm)
            rhs = campbell_formula(skel, law, z)
            out.append(Report(f"campbell[skeleton={si},z={z:g}]", lhs, ci, rhs, 0.0,
                              _agree(lhs, ci, rhs, 0.0)))
    return out


def recip_kernel(N: int, k: int) -> float:
    """(1/(k-1)!) int_0^inf (e^z - 1)^{k-1} e^{-zN} dz by quadrature in w, z = -log(1-w)."""
    if N < k:
        return math.inf
    val, _ = integrate.quad(lambda w: w ** (k - 1) * (1 - w) ** (N - k), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13, limit=200)
    return val / math.factorial(k - 1)


def desc_factorial(N, k: int):
    N = np.asarray(N, dtype=float)
    out = np.ones_like(N)
    for j in range(k):
        out *= N - j
    return out


def recip_check(k: int, *, constant: int | None = None, samples=None,
                laplace: Callable[[float], float] | None = None, tol: float = 1e-8) -> Report:
    """E[1/N^{(k)}] against (1/(k-1)!) int (e^z-1)^{k-1} E[e^{-zN}] dz."""
    if constant is not None:
        lhs = 1.0 / float(desc_factorial(constant, k))
        rhs = recip_kernel(int(constant), k)
        return Report(f"recip[N={constant},k={k}]", lhs, 0.0, rhs, 0.0, abs(lhs - rhs) <= tol)
    if samples is None or laplace is None:
        raise ValueError("need a constant or (samples, laplace)")
    x = 1.0 / desc_factorial(np.asarray(samples), k)
    lhs = float(x.mean())
    ci = 3 * float(x.std(ddof=1)) / math.sqrt(x.size)

    def g(w):
        if w >= 1.0:
            return 0.0
        z = -math.log1p(-w)
        return (w / (1 - w)) ** (k - 1) * laplace(z) / (1 - w)

    rhs = integrate.quad(g, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=400)[0] / math.factorial(k - 1)
    return Report(f"recip[k={k}]", lhs, ci, rhs, 0.0, _agree(lhs, ci, rhs, 0.0))


# ---------------------------------------------------------------- Q ensembles

@dataclass
class QSample:
    psi: np.ndarray  # (n, k-1) unordered spine split times
    N_T: np.ndarray
    ordinary: np.ndarray
    residue: np.ndarray
    nonbinary: np.ndarray  # splits with more than two spine groups or l > n


def sample_q(law: OffspringLaw, T: float, k: int, n: int, seed: int, use_bd: bool | None = None,
             start: int = 0) -> QSample:
    """n independent (skeleton, immigration) draws, replicate i seeded by (seed, start + i)."""
    from .rng import SPINE, replicate_rng
    if use_bd is None:
        use_bd = law.kind == "bd"
    bd = BDParams(law.params["alpha"], law.params["beta"]) if use_bd else None
    psi = np.empty((n, k - 1))
    NT = np.empty(n, dtype=np.int64)
    ordn = np.empty(n, dtype=np.int64)
    resn = np.empty(n, dtype=np.int64)
    nonbin = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rng = replicate_rng(seed, start + i, SPINE)
        skel = sample_skeleton_bd(k, T, bd, rng) if use_bd else sample_skeleton_general(k, T, law, rng)
        o, rr = immigrate_totals(skel, law, rng)
        psi[i] = rng.permutation(skel.psi)
        ordn[i], resn[i] = o, rr
        NT[i] = k + o + rr
        nonbin[i] = sum(1 for ev in skel.events if ev.n > 2)
    return QSample(psi, NT, ordn, resn, nonbin)


# ---------------------------------------------------------------- first-moment identity

def make_f(selector: str) -> Callable[[np.ndarray], np.ndarray]:
    """'one' or 'tail:s1,s2,...' (indicator that every unordered split is >= s_i)."""
    if selector == "one":
        return lambda S: np.ones(S.shape[0])
    if selector.startswith("tail:"):
        s = np.array([float(x) for x in selector[5:].split(",")])
        return lambda S: np.all(S >= s, axis=1).astype(float)
    raise ValueError(f"unknown functional {selector!r}")


def moments_for(law: OffspringLaw, T: float, k: int) -> tuple[float, float]:
    """(E[N_T^{(k)}], P(N_T >= k))."""
    if law.kind == "bd":
        p = BDParams(law.params["alpha"], law.params["beta"])
        return genfun.bd_descending_moment(p, k, T), genfun.bd_tail(p, k, T)
    Mk = float(genfun.moment_ode(law, k, T, n_grid=2)(k, T))
    head = genfun.small_population_probs(law, T, k)
    return Mk, 1.0 - float(head.sum())


def firstprop_check(law: OffspringLaw, T: float, k: int, selector: str, *, n_forward: int,
                    n_q: int, seed: int, forward=None) -> Report:
    """E[f(unordered splits) | N_T >= k] by forward simulation vs the spine representation."""
    from .ensemble import run_conditioned
    f = make_f(selector)
    if forward is None:
        forward = run_conditioned(law, T, (k,), n_forward, seed)
    S = forward.splits[k]
    vals = f(S)
    lhs = float(vals.mean())
    lhs_ci = 3 * float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.std() > 0 else 0.0
    q = sample_q(law, T, k, n_q, seed + 1)
    kern = {int(N): recip_kernel(int(N), k) for N in np.unique(q.N_T)}
    w = np.array([kern[int(N)] for N in q.N_T])
    Mk, tail = moments_for(law, T, k)
    x = Mk / tail * f(q.psi) * w
    rhs = float(x.mean())
    rhs_ci = 3 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return Report(f"firstprop[{selector},T={T:g},k={k}]", lhs, lhs_ci, rhs, rhs_ci,
                  _agree(lhs, lhs_ci, rhs, rhs_ci))


# ---------------------------------------------------------------- full Q trees

def build_q_tree(skel: SpineSkeleton, law: OffspringLaw, rng: np.random.Generator):
    """Assemble a whole tree under Q from a skeleton.

    Returns (GWTree, spine leaf index per mark 1..k).
    """
    from .gw_sim import GWTree
    T, r, m = skel.T, law.rate, law.mean
    cdf, sb = law.cdf(), law.size_biased_cdf()
    split_of = {ev.block: ev for ev in skel.events}
    nodes = []  # [parent, birth, death, children]

    def new(parent, birth):
        nodes.append([parent, birth, T, []])
        if parent >= 0:
            nodes[parent][3].append(len(nodes) - 1)
        return len(nodes) - 1

    def ordinary(parent, birth):
        stack = [new(parent, birth)]
        while stack:
            i = stack.pop()
            d = nodes[i][1] + rng.exponential(1 / r)
            if d >= T:
                continue
            nodes[i][2] = d
            for _ in range(K.draw_index(cdf, rng.random())):
                stack.append(new(i, d))

    leaf_of = {}
    work = [(new(-1, 0.0), tuple(range(1, skel.k + 1)))]
    while work:
        i, block = work.pop()
        t = nodes[i][1]
        end = split_of[block].time if block in split_of else T
        b = t + rng.exponential(1 / (m * r))
        if b < end:
            nodes[i][2] = b
            J = K.draw_index(sb, rng.random())
            keep = int(rng.integers(J))
            for c in range(J):
                if c == keep:
                    work.append((new(i, b), block))
                else:
                    ordinary(i, b)
            continue
        if block not in split_of:
            leaf_of[block[0]] = i
            continue
        ev = split_of[block]
        nodes[i][2] = ev.time
        slots = rng.permutation(ev.l)
        groups = {int(slots[g]): ch for g, ch in enumerate(ev.children)}
        for c in range(ev.l):
            if c in groups:
                work.append((new(i, ev.time), groups[c]))
            else:
                ordinary(i, ev.time)
    # renumber breadth-first so siblings are contiguous
    order = [0]
    for i in order:
        order.extend(nodes[i][3])
    idx = {old: new_i for new_i, old in enumerate(order)}
    rows = [(idx[o], idx[nodes[o][0]] if nodes[o][0] >= 0 else -1, nodes[o][1], nodes[o][2]) for o in order]
    tree = GWTree.from_records(T, rows)
    return tree, np.array([idx[leaf_of[j]] for j in range(1, skel.k + 1)])
