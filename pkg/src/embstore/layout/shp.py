"""Recursive balanced bisection minimising average query fanout.

Each node starts from a seeded random halving and is refined by swapping
rank-matched vertex pairs with positive combined move gain. A round whose
swaps do not strictly lower the node's fanout is rolled back; later rounds at
that node then only swap pairs whose queries are disjoint from every other
pair's, and refinement stops once such a round finds nothing to swap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..rng import stream
from ..workload import Trace
from .base import Layout


@dataclass(frozen=True)
class NodeStats:
    level: int
    node: int
    size: int
    fanouts: tuple[int, ...]  # summed fanout over the node's queries, initial then per round
    swaps: tuple[int, ...]


@numba.njit(cache=True, nogil=True)
def _fanout_total(side, qptr, qv):
    total = 0
    for q in range(len(qptr) - 1):
        a = 0
        b = 0
        for p in range(qptr[q], qptr[q + 1]):
            if side[qv[p]] == 0:
                a = 1
            else:
                b = 1
        total += a + b
    return total


@numba.njit(cache=True, nogil=True)
def _touches(v, vptr, vq, mark, value):
    for p in range(vptr[v], vptr[v + 1]):
        if mark[vq[p]] == value:
            return True
    return False


@numba.njit(cache=True, nogil=True)
def _match(left, right, gain, vptr, vq, stamp, locked, window, exclusive):
    """Rank-matched pairs with positive combined gain.

    A right-side vertex sharing a query with its left partner is skipped in
    favour of the next unmatched one (at most ``window`` tries): swapping two
    vertices of the same query does not realise the sum of their gains. With
    ``exclusive`` set, no two pairs may touch a common query either, so the
    gains add up exactly and any non-empty matching lowers the fanout.
    """
    nl, nr = len(left), len(right)
    used = np.zeros(nr, dtype=np.bool_)
    pl = np.empty(min(nl, nr), dtype=np.int64)
    pr = np.empty(min(nl, nr), dtype=np.int64)
    k = 0
    j0 = 0
    for i in range(nl):
        while j0 < nr and used[j0]:
            j0 += 1
        if j0 == nr:
            break
        u = left[i]
        if gain[u] + gain[right[j0]] <= 0:
            break  # both lists are sorted, nothing later can be positive
        if exclusive and _touches(u, vptr, vq, locked, 1):
            continue
        for p in range(vptr[u], vptr[u + 1]):
            stamp[vq[p]] = i
        tries = 0
        j = j0
        while j < nr and tries < window:
            if not used[j]:
                v = right[j]
                if gain[u] + gain[v] <= 0:
                    break
                if not (_touches(v, vptr, vq, stamp, i) or (exclusive and _touches(v, vptr, vq, locked, 1))):
                    used[j] = True
                    pl[k] = u
                    pr[k] = v
                    k += 1
                    if exclusive:
                        for p in range(vptr[u], vptr[u + 1]):
                            locked[vq[p]] = 1
                        for p in range(vptr[v], vptr[v + 1]):
                            locked[vq[p]] = 1
                    break
                tries += 1
            j += 1
    return pl[:k], pr[:k]


@numba.njit(cache=True, nogil=True)
def _refine(side, qptr, qv, vptr, vq, iters, window):
    m = len(side)
    nq = len(qptr) - 1
    cnt = np.zeros((nq, 2), dtype=np.int64)
    gain = np.zeros(m, dtype=np.int64)
    stamp = np.full(nq, -1, dtype=np.int64)
    locked = np.zeros(nq, dtype=np.int64)
    exclusive = False
    fan = np.zeros(iters + 1, dtype=np.int64)
    nswaps = np.zeros(iters + 1, dtype=np.int64)
    fan[0] = _fanout_total(side, qptr, qv)
    rounds = 0
    for it in range(iters):
        cnt[:, :] = 0
        for q in range(nq):
            for p in range(qptr[q], qptr[q + 1]):
                cnt[q, side[qv[p]]] += 1
        for v in range(m):
            s = side[v]
            g = 0
            for p in range(vptr[v], vptr[v + 1]):
                q = vq[p]
                own = cnt[q, s]
                other = cnt[q, 1 - s]
                if own == 1 and other >= 1:
                    g += 1
                elif other == 0 and own >= 2:
                    g -= 1
            gain[v] = g
        left = np.flatnonzero(side == 0)
        right = np.flatnonzero(side == 1)
        # descending gain, ascending vertex index on ties
        left = left[np.argsort(-gain[left], kind="mergesort")]
        right = right[np.argsort(-gain[right], kind="mergesort")]
        stamp[:] = -1
        locked[:] = 0
        pl, pr = _match(left, right, gain, vptr, vq, stamp, locked, window, exclusive)
        k = len(pl)
        rounds = it + 1
        if k == 0:
            fan[rounds] = fan[it]
            break
        for i in range(k):
            side[pl[i]] = 1
            side[pr[i]] = 0
        f = _fanout_total(side, qptr, qv)
        if f < fan[it]:
            fan[rounds] = f
            nswaps[rounds] = k
        else:
            for i in range(k):
                side[pl[i]] = 0
                side[pr[i]] = 1
            fan[rounds] = fan[it]
            if exclusive:
                break
            exclusive = True  # retry with non-interacting pairs only
    return fan[:rounds + 1], nswaps[:rounds + 1]


def _dedup_pins(train: Trace, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Unique (query, vertex) pins of queries touching >= 2 distinct ids."""
    qidx = np.repeat(np.arange(train.num_queries, dtype=np.int64), train.query_lengths())
    keys = np.unique(qidx * np.int64(n) + train.ids)
    pq, pv = keys // n, keys % n
    sizes = np.bincount(pq, minlength=train.num_queries)
    keep = sizes[pq] >= 2
    return pq[keep], pv[keep]


def _csr(groups: np.ndarray, values: np.ndarray, num_groups: int):
    order = np.argsort(groups, kind="stable")
    ptr = np.zeros(num_groups + 1, dtype=np.int64)
    np.cumsum(np.bincount(groups, minlength=num_groups), out=ptr[1:])
    return ptr, values[order].astype(np.int64)


def shp_depth(n: int, B: int) -> int:
    return max(0, math.ceil(math.log2(max(1.0, n / B))))


def shp_layout(train: Trace, n: int, B: int = 32, iters: int = 16, seed: int = 0,
               table: int | None = None, stats: list | None = None, window: int = 32) -> Layout:
    """Partition ``n`` vectors into ``2**depth`` blocks using the training queries.

    Pass a list as ``stats`` to collect a :class:`NodeStats` per recursion node.
    """
    if n < 1 or B < 1:
        raise ValueError("n and B must be >= 1")
    if table is not None:
        train = train.restrict(table)
    elif len(set(train.query_table.tolist())) > 1:
        raise ValueError("training trace spans several tables; pass table=")
    depth = shp_depth(n, B)
    pins_q, pins_v = _dedup_pins(train, n) if train.num_queries else (np.zeros(0, np.int64),) * 2

    node_of = np.zeros(n, dtype=np.int64)
    for level in range(depth):
        num_nodes = 1 << level
        # vertices of each node, ascending id; local index = rank inside the node
        vorder = np.lexsort((np.arange(n), node_of))
        vptr_node = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(node_of, minlength=num_nodes), out=vptr_node[1:])
        local = np.empty(n, dtype=np.int64)
        local[vorder] = np.arange(n) - vptr_node[node_of[vorder]]

        pn = node_of[pins_v]
        porder = np.lexsort((pins_v, pins_q, pn))
        sq, sv, sn = pins_q[porder], pins_v[porder], pn[porder]
        pptr_node = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(sn, minlength=num_nodes), out=pptr_node[1:])

        new_node = np.empty(n, dtype=np.int64)
        for node in range(num_nodes):
            verts = vorder[vptr_node[node]:vptr_node[node + 1]]
            m = len(verts)
            rng = stream("shp", seed, level, node)
            side = np.ones(m, dtype=np.int64)
            side[rng.permutation(m)[: (m + 1) // 2]] = 0

            a, b = pptr_node[node], pptr_node[node + 1]
            q, v = sq[a:b], local[sv[a:b]]
            # sub-queries with >= 2 vertices inside this node
            if len(q):
                starts = np.flatnonzero(np.r_[True, q[1:] != q[:-1]])
                lens = np.diff(np.r_[starts, len(q)])
                qid = np.repeat(np.arange(len(starts)), lens)
                keep = lens[qid] >= 2
                q_local = np.unique(qid[keep], return_inverse=True)[1].ravel() if keep.any() else qid[:0]
                v = v[keep]
                nq = int(q_local.max()) + 1 if len(q_local) else 0
            else:
                q_local, nq = q, 0
            qptr = np.zeros(nq + 1, dtype=np.int64)
            np.cumsum(np.bincount(q_local, minlength=nq), out=qptr[1:])
            qv = v.astype(np.int64)
            vptr, vq = _csr(qv, np.asarray(q_local, dtype=np.int64), m)

            fans, swaps = _refine(side, qptr, qv, vptr, vq, iters, window)
            if stats is not None:
                stats.append(NodeStats(level, node, m, tuple(int(f) for f in fans),
                                       tuple(int(s) for s in swaps)))
            new_node[verts] = 2 * node + side
        node_of = new_node

    num_blocks = 1 << depth
    order = np.lexsort((np.arange(n), node_of))
    counts = np.bincount(node_of, minlength=num_blocks)
    if counts.max() > B:
        raise AssertionError("leaf larger than block capacity")
    slot = np.empty(n, dtype=np.int64)
    starts = np.zeros(num_blocks + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    slot[order] = np.arange(n) - starts[node_of[order]]
    return Layout(B, node_of.copy(), slot, num_blocks, "shp", seed)
