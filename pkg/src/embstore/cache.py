"""Vector-granularity LRU cache over block-granularity NVM reads.

Policies that insert prefetched vectors below the MRU end keep the LRU queue
in an implicit treap (position 0 = MRU), giving O(log S) insertion at any rank.
Policies that only ever insert at the MRU end use a doubly linked list. The
shadow list used by the admission policies is also a linked LRU of ids.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numba
import numpy as np

from .layout import Layout
from .workload import Trace


@dataclass(frozen=True)
class NoPrefetch:
    pass


@dataclass(frozen=True)
class PrefetchAll:
    pass


@dataclass(frozen=True)
class InsertAt:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("insertion position must lie in [0, 1]")


@dataclass(frozen=True)
class ShadowAdmit:
    multiplier: float

    def __post_init__(self):
        if self.multiplier < 1.0:
            raise ValueError("shadow multiplier must be >= 1")


@dataclass(frozen=True)
class ShadowCombined:
    p: float
    multiplier: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("insertion position must lie in [0, 1]")
        if self.multiplier < 1.0:
            raise ValueError("shadow multiplier must be >= 1")


@dataclass(frozen=True, eq=False)
class FreqThreshold:
    """Admit a prefetched vector iff its training count exceeds ``t``."""

    t: int
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.t < -1:
            raise ValueError("threshold must be >= -1")


CachePolicy = Union[NoPrefetch, PrefetchAll, InsertAt, ShadowAdmit, ShadowCombined, FreqThreshold]

_KIND = {NoPrefetch: 0, PrefetchAll: 1, InsertAt: 2, ShadowAdmit: 3, ShadowCombined: 4, FreqThreshold: 5}


def policy_label(policy: CachePolicy) -> tuple[str, str]:
    """(name, parameter) pair used in sweep CSVs."""
    name = type(policy).__name__
    if isinstance(policy, InsertAt):
        return name, f"p={policy.p:g}"
    if isinstance(policy, ShadowAdmit):
        return name, f"m={policy.multiplier:g}"
    if isinstance(policy, ShadowCombined):
        return name, f"p={policy.p:g};m={policy.multiplier:g}"
    if isinstance(policy, FreqThreshold):
        return name, f"t={policy.t}"
    return name, ""


@dataclass(frozen=True)
class CacheConfig:
    capacity: int
    policy: CachePolicy = NoPrefetch()
    block_size_bytes: int = 4096
    vector_size_bytes: int = 128

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.vector_size_bytes < 1 or self.block_size_bytes % self.vector_size_bytes:
            raise ValueError("vector size must divide block size")

    @property
    def vectors_per_block(self) -> int:
        return self.block_size_bytes // self.vector_size_bytes


@dataclass(frozen=True)
class SimMetrics:
    lookups: int
    demand_hits: int
    demand_misses: int
    block_reads: int
    prefetch_admitted: int
    prefetch_used: int
    eb_fraction: float

    @property
    def hit_rate(self) -> float:
        return self.demand_hits / self.lookups if self.lookups else 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class LayoutMismatchError(ValueError):
    """The trace refers to a vector the layout does not place."""


# -- treap over the LRU queue -------------------------------------------------

@numba.njit(cache=True, inline="always")
def _sz(S, x):
    return S[x] if x >= 0 else 0


@numba.njit(cache=True)
def _rotate_up(x, L, R, P, S, root):
    p = P[x]
    g = P[p]
    if L[p] == x:
        L[p] = R[x]
        if R[x] >= 0:
            P[R[x]] = p
        R[x] = p
    else:
        R[p] = L[x]
        if L[x] >= 0:
            P[L[x]] = p
        L[x] = p
    P[p] = x
    P[x] = g
    if g < 0:
        root[0] = x
    elif L[g] == p:
        L[g] = x
    else:
        R[g] = x
    S[p] = 1 + _sz(S, L[p]) + _sz(S, R[p])
    S[x] = 1 + _sz(S, L[x]) + _sz(S, R[x])


@numba.njit(cache=True)
def _insert(x, pos, L, R, P, S, PR, root):
    """Insert node ``x`` so that it ends up at 0-based position ``pos``."""
    L[x] = -1
    R[x] = -1
    S[x] = 1
    if root[0] < 0:
        P[x] = -1
        root[0] = x
        return
    cur = root[0]
    while True:
        S[cur] += 1
        ls = _sz(S, L[cur])
        if pos <= ls:
            if L[cur] < 0:
                L[cur] = x
                break
            cur = L[cur]
        else:
            pos -= ls + 1
            if R[cur] < 0:
                R[cur] = x
                break
            cur = R[cur]
    P[x] = cur
    while P[x] >= 0 and PR[x] > PR[P[x]]:
        _rotate_up(x, L, R, P, S, root)


@numba.njit(cache=True)
def _delete(x, L, R, P, S, PR, root):
    while L[x] >= 0 or R[x] >= 0:
        if L[x] < 0:
            c = R[x]
        elif R[x] < 0:
            c = L[x]
        elif PR[L[x]] > PR[R[x]]:
            c = L[x]
        else:
            c = R[x]
        _rotate_up(c, L, R, P, S, root)
    p = P[x]
    if p < 0:
        root[0] = -1
    else:
        if L[p] == x:
            L[p] = -1
        else:
            R[p] = -1
        while p >= 0:
            S[p] -= 1
            p = P[p]
    P[x] = -1


@numba.njit(cache=True)
def _last(L, R, root):
    cur = root[0]
    while R[cur] >= 0:
        cur = R[cur]
    return cur


# -- simulation loop ----------------------------------------------------------

@numba.njit(cache=True)
def _list_push_front(x, prev, nxt, ends):
    prev[x] = -1
    nxt[x] = ends[0]
    if ends[0] >= 0:
        prev[ends[0]] = x
    else:
        ends[1] = x
    ends[0] = x


@numba.njit(cache=True)
def _list_remove(x, prev, nxt, ends):
    a = prev[x]
    b = nxt[x]
    if a >= 0:
        nxt[a] = b
    else:
        ends[0] = b
    if b >= 0:
        prev[b] = a
    else:
        ends[1] = a
    prev[x] = -1
    nxt[x] = -1


@numba.njit(cache=True, nogil=True)
def _simulate(lookups, block_of, bptr, bids, capacity, kind, p, shadow_cap, t, counts, prio):
    n = len(block_of)
    # ranked policies need positional insertion (treap); the rest only touch
    # the MRU end, so a linked list suffices
    ranked = kind == 2 or kind == 4
    L = np.full(n, -1, dtype=np.int64)
    R = np.full(n, -1, dtype=np.int64)
    P = np.full(n if ranked else 1, -1, dtype=np.int64)
    S = np.zeros(n if ranked else 1, dtype=np.int64)
    root = np.full(2, -1, dtype=np.int64)  # treap root, or list (head, tail)
    cached = np.zeros(n, dtype=np.bool_)
    unused_pf = np.zeros(n, dtype=np.bool_)

    use_shadow = kind == 3 or kind == 4
    s_prev = np.full(n if use_shadow else 1, -1, dtype=np.int64)
    s_next = np.full(n if use_shadow else 1, -1, dtype=np.int64)
    s_ends = np.full(2, -1, dtype=np.int64)
    in_shadow = np.zeros(n if use_shadow else 1, dtype=np.bool_)
    s_count = 0

    occ = 0
    hits = 0
    misses = 0
    admitted = 0
    used = 0

    for i in range(len(lookups)):
        v = lookups[i]
        if use_shadow:
            if in_shadow[v]:
                _list_remove(v, s_prev, s_next, s_ends)
                _list_push_front(v, s_prev, s_next, s_ends)
            else:
                in_shadow[v] = True
                _list_push_front(v, s_prev, s_next, s_ends)
                s_count += 1
                if s_count > shadow_cap:
                    u = s_ends[1]
                    _list_remove(u, s_prev, s_next, s_ends)
                    in_shadow[u] = False
                    s_count -= 1

        if cached[v]:
            hits += 1
            if unused_pf[v]:
                used += 1
                unused_pf[v] = False
            if ranked:
                _delete(v, L, R, P, S, prio, root)
                _insert(v, 0, L, R, P, S, prio, root)
            else:
                _list_remove(v, L, R, root)
                _list_push_front(v, L, R, root)
            continue

        misses += 1
        if ranked:
            _insert(v, 0, L, R, P, S, prio, root)
        else:
            _list_push_front(v, L, R, root)
        cached[v] = True
        occ += 1
        while occ > capacity:
            if ranked:
                u = _last(L, R, root)
                _delete(u, L, R, P, S, prio, root)
            else:
                u = root[1]
                _list_remove(u, L, R, root)
            cached[u] = False
            unused_pf[u] = False
            occ -= 1
        if kind == 0:
            continue

        b = block_of[v]
        for j in range(bptr[b], bptr[b + 1]):
            w = bids[j]
            if w == v or cached[w]:
                continue
            if kind == 1:
                pos = 0
            elif kind == 2:
                pos = int(math.floor(p * occ))
            elif kind == 3:
                if not in_shadow[w]:
                    continue
                pos = 0
            elif kind == 4:
                pos = 0 if in_shadow[w] else int(math.floor(p * occ))
            else:
                if counts[w] <= t:
                    continue
                pos = 0
            if ranked:
                _insert(w, pos, L, R, P, S, prio, root)
            else:
                _list_push_front(w, L, R, root)
            cached[w] = True
            unused_pf[w] = True
            admitted += 1
            occ += 1
            while occ > capacity:
                if ranked:
                    u = _last(L, R, root)
                    _delete(u, L, R, P, S, prio, root)
                else:
                    u = root[1]
                    _list_remove(u, L, R, root)
                cached[u] = False
                unused_pf[u] = False
                occ -= 1

    return hits, misses, admitted, used


def _priorities(n: int) -> np.ndarray:
    # splitmix64 of the id: fixed pseudo-random treap priorities
    z = np.arange(n, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(1)).astype(np.int64)


_PRIO_CACHE: dict[int, np.ndarray] = {}


def _prio(n: int) -> np.ndarray:
    if n not in _PRIO_CACHE:
        _PRIO_CACHE[n] = _priorities(n)
    return _PRIO_CACHE[n]


def simulate_lookups(lookups: np.ndarray, layout: Layout, config: CacheConfig) -> SimMetrics:
    """Replay a flat lookup sequence (one table) through the cache."""
    lookups = np.ascontiguousarray(lookups, dtype=np.int64)
    if len(lookups) == 0:
        raise ValueError("no lookups to simulate")
    if (lookups.min() < 0 or lookups.max() >= layout.n):
        raise LayoutMismatchError(f"lookup outside layout of {layout.n} vectors")
    pol = config.policy
    kind = _KIND[type(pol)]
    p = getattr(pol, "p", 0.0)
    mult = getattr(pol, "multiplier", 1.0)
    shadow_cap = math.ceil(mult * config.capacity)
    if isinstance(pol, FreqThreshold):
        counts = np.ascontiguousarray(pol.counts, dtype=np.int64)
        if len(counts) < layout.n:
            raise ValueError("access counts shorter than the layout")
        t = pol.t
    else:
        counts = np.zeros(1, dtype=np.int64)
        t = 0
    bptr, bids = layout.members()
    hits, misses, admitted, used = _simulate(
        lookups, layout.block_of, bptr, bids, config.capacity, kind, float(p),
        shadow_cap, t, counts, _prio(layout.n))
    reads = misses
    eb = (config.vector_size_bytes * (misses + used)) / (config.block_size_bytes * reads)
    return SimMetrics(len(lookups), int(hits), int(misses), int(reads), int(admitted), int(used), eb)


def simulate(eval_trace: Trace, layout: Layout, config: CacheConfig, table: int | None = None) -> SimMetrics:
    if table is None:
        tables = set(eval_trace.query_table.tolist()) or set(eval_trace.tables)
        if len(tables) != 1:
            raise ValueError("trace spans several tables; pass table=")
        table = tables.pop()
    return simulate_lookups(eval_trace.lookups(table), layout, config)


def effective_bandwidth_increase(policy: SimMetrics, baseline: SimMetrics) -> float:
    """Percent change in effective bandwidth relative to the no-prefetch baseline."""
    if policy.block_reads == 0:
        raise ZeroDivisionError("policy performed no block reads")
    return 100.0 * (baseline.block_reads / policy.block_reads - 1.0)
