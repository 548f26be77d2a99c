"""Compiled inner loops for forward simulation of Galton-Watson trees."""
from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
OVERFLOW = 1
EXHAUSTED = 2


@njit(cache=True, nogil=True)
def _resize_i(a, n):
    b = np.empty(n, np.int64)
    b[: a.size] = a
    return b


@njit(cache=True, nogil=True)
def _resize_f(a, n):
    b = np.empty(n, np.float64)
    b[: a.size] = a
    return b


@njit(cache=True, nogil=True)
def draw_index(cdf, u):
    j = 0
    while u >= cdf[j]:
        j += 1
    return j


@njit(cache=True, nogil=True)
def _grow_inner(cdf, scale, T, rng, parent, birth, death, nchild, first, stack, state):
    # state = [n, sp, alive, events]; returns 1 when buffers need to grow.
    # Array variables are never rebound here, which keeps the loop free of
    # reference-count traffic.
    maxL = cdf.size - 1
    n, sp, alive, events = state[0], state[1], state[2], state[3]
    status = 0
    while sp > 0:
        if n + maxL > parent.size or sp + maxL > stack.size:
            status = 1
            break
        sp -= 1
        i = stack[sp]
        d = birth[i] + rng.exponential(scale)
        if d >= T:
            death[i] = T
            nchild[i] = 0
            first[i] = -1
            alive += 1
            continue
        death[i] = d
        events += 1
        L = draw_index(cdf, rng.random())
        nchild[i] = L
        first[i] = n if L > 0 else -1
        for _ in range(L):
            parent[n] = i
            birth[n] = d
            stack[sp] = n
            sp += 1
            n += 1
    state[0], state[1], state[2], state[3] = n, sp, alive, events
    return status


@njit(cache=True, nogil=True)
def grow(cdf, r, t0, T, rng, cap, parent, birth, death, nchild, first, stack):
    """Grow one tree rooted at time t0 into the supplied buffers.

    Returns (buffers..., n_particles, n_alive, n_events, status). Buffers may be
    reallocated, so callers must use the returned ones.
    """
    parent[0] = -1
    birth[0] = t0
    stack[0] = 0
    state = np.zeros(4, np.int64)
    state[0] = 1
    state[1] = 1
    maxL = cdf.size - 1
    while _grow_inner(cdf, 1.0 / r, T, rng, parent, birth, death, nchild, first, stack, state):
        n = state[0]
        if n + maxL > parent.size:
            if n + maxL > cap:
                return parent, birth, death, nchild, first, stack, n, state[2], state[3], OVERFLOW
            size = min(max(2 * parent.size, n + maxL), cap)
            parent = _resize_i(parent, size)
            birth = _resize_f(birth, size)
            death = _resize_f(death, size)
            nchild = _resize_i(nchild, size)
            first = _resize_i(first, size)
        if state[1] + maxL > stack.size:
            stack = _resize_i(stack, 2 * stack.size + maxL)
    return parent, birth, death, nchild, first, stack, state[0], state[2], state[3], OK


@njit(cache=True, nogil=True)
def grow_conditioned(cdf, r, T, k, rng, cap, max_attempts):
    """Rejection loop: regrow until at least k particles are alive at T."""
    size = 256
    parent = np.empty(size, np.int64)
    birth = np.empty(size, np.float64)
    death = np.empty(size, np.float64)
    nchild = np.empty(size, np.int64)
    first = np.empty(size, np.int64)
    stack = np.empty(size, np.int64)
    attempts = 0
    while attempts < max_attempts:
        attempts += 1
        parent, birth, death, nchild, first, stack, n, alive, events, status = grow(
            cdf, r, 0.0, T, rng, cap, parent, birth, death, nchild, first, stack)
        if status != OK:
            return parent[:n], birth[:n], death[:n], nchild[:n], first[:n], alive, events, attempts, status
        if alive >= k:
            return parent[:n], birth[:n], death[:n], nchild[:n], first[:n], alive, events, attempts, OK
    return parent[:0], birth[:0], death[:0], nchild[:0], first[:0], 0, 0, attempts, EXHAUSTED


@njit(cache=True, nogil=True)
def _count_inner(cdf, scale, T, rng, stack, state, cap):
    # state = [sp, alive, total]
    maxL = cdf.size - 1
    sp, alive, total = state[0], state[1], state[2]
    status = 0
    while sp > 0:
        if sp + maxL > stack.size:
            status = 1
            break
        sp -= 1
        d = stack[sp] + rng.exponential(scale)
        if d >= T:
            alive += 1
            continue
        L = draw_index(cdf, rng.random())
        total += L
        if total > cap:
            status = 2
            break
        for _ in range(L):
            stack[sp] = d
            sp += 1
    state[0], state[1], state[2] = sp, alive, total
    return status


@njit(cache=True, nogil=True)
def count_alive(cdf, r, t0, T, rng, cap):
    """Population at T of a tree rooted at t0, without storing the tree; -1 on overflow."""
    stack = np.empty(64, np.float64)
    stack[0] = t0
    state = np.ones(3, np.int64)
    state[1] = 0
    while True:
        status = _count_inner(cdf, 1.0 / r, T, rng, stack, state, cap)
        if status == 0:
            return state[1]
        if status == 2:
            return -1
        stack = _resize_f(stack, 2 * stack.size + cdf.size)


@njit(cache=True, nogil=True)
def count_alive_many(cdf, r, T, n, rng, cap):
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = count_alive(cdf, r, 0.0, T, rng, cap)
    return out


@njit(cache=True, nogil=True)
def immigrate_segments(seg_start, seg_end, cdf, sb_cdf, r, m, T, rng, cap):
    """Ordinary population at T from Poisson(m r) births along spine segments.

    Each birth has a size-biased number J of children; one continues the spine
    and J - 1 root independent ordinary subtrees.
    Returns (ordinary population, number of births, total spine length).
    """
    rate = m * r
    pop = 0
    births = 0
    length = 0.0
    for s in range(seg_start.size):
        a = seg_start[s]
        b = seg_end[s]
        length += b - a
        t = a + rng.exponential(1.0 / rate)
        while t < b:
            births += 1
            J = draw_index(sb_cdf, rng.random())
            for _ in range(J - 1):
                c = count_alive(cdf, r, t, T, rng, cap)
                if c < 0:
                    return -1, births, length
                pop += c
            t += rng.exponential(1.0 / rate)
    return pop, births, length


@njit(cache=True, nogil=True)
def sample_leaves(death, nchild, T, k, rng):
    """k distinct particles alive at T, uniformly (partial Fisher-Yates)."""
    m = 0
    for i in range(death.size):
        if death[i] >= T and nchild[i] == 0:
            m += 1
    alive = np.empty(m, np.int64)
    m = 0
    for i in range(death.size):
        if death[i] >= T and nchild[i] == 0:
            alive[m] = i
            m += 1
    for j in range(k):
        x = j + int(rng.random() * (m - j))
        tmp = alive[j]
        alive[j] = alive[x]
        alive[x] = tmp
    return alive[:k].copy()


@njit(cache=True, nogil=True)
def coalescence(parent, death, T, leaves):
    """sigma matrix: death time of the last common ancestor of each pair."""
    k = leaves.size
    stamp = np.full(parent.size, -1, np.int64)
    sig = np.full((k, k), T)
    for i in range(k):
        v = leaves[i]
        while v >= 0:
            stamp[v] = i
            v = parent[v]
        for j in range(i + 1, k):
            v = leaves[j]
            while stamp[v] != i:
                v = parent[v]
            sig[i, j] = death[v]
            sig[j, i] = death[v]
    return sig
