import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embstore.cache import (CacheConfig, FreqThreshold, InsertAt, LayoutMismatchError, NoPrefetch, PrefetchAll,
                            ShadowAdmit, ShadowCombined, SimMetrics, effective_bandwidth_increase, simulate,
                            simulate_lookups)
from embstore.layout import Layout, identity_layout, random_layout
from embstore.workload import Query, Trace

from oracles import reference_simulate


@st.composite
def instances(draw):
    n = draw(st.integers(1, 40))
    B = draw(st.integers(1, 6))
    lay = random_layout(n, B, draw(st.integers(0, 1000)))
    lk = np.array(draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=200)))
    cap = draw(st.integers(1, n + 2))
    counts = np.array(draw(st.lists(st.integers(0, 6), min_size=n, max_size=n)))
    return lay, lk, cap, counts


def _ref(lay, lk, cap, policy, **kw):
    ptr, ids = lay.members()
    members = [ids[ptr[b]:ptr[b + 1]].tolist() for b in range(lay.num_blocks)]
    return reference_simulate(lk.tolist(), lay.block_of.tolist(), members, cap, policy, **kw)


def _tuple(m: SimMetrics):
    return m.demand_hits, m.demand_misses, m.prefetch_admitted, m.prefetch_used


@settings(max_examples=150, deadline=None)
@given(instances(), st.sampled_from([0.0, 0.25, 0.5, 0.9, 1.0]), st.sampled_from([1.0, 1.5, 2.0, 3.0]),
       st.integers(-1, 6))
def test_matches_reference(inst, p, m, t):
    lay, lk, cap, counts = inst
    cases = [
        (NoPrefetch(), "none", {}),
        (PrefetchAll(), "all", {}),
        (InsertAt(p), "insert", {"p": p}),
        (ShadowAdmit(m), "shadow", {"mult": m}),
        (ShadowCombined(p, m), "combined", {"p": p, "mult": m}),
        (FreqThreshold(t, counts), "freq", {"t": t, "counts": counts.tolist()}),
    ]
    for pol, name, kw in cases:
        got = simulate_lookups(lk, lay, CacheConfig(cap, pol))
        assert _tuple(got) == _ref(lay, lk, cap, name, **kw), name
        assert got.demand_hits + got.demand_misses == got.lookups == len(lk)
        assert got.block_reads == got.demand_misses
        assert got.prefetch_used <= got.prefetch_admitted


def _shadow_by_recency(lay, lk, cap, mult):
    """ShadowAdmit replay where shadow membership is recomputed from the demand
    history (ids among the ceil(m*S) most recently demanded), not kept as a list."""
    k = math.ceil(mult * cap)
    last = {}
    queue, unused = [], set()
    hits = misses = admitted = used = 0
    ptr, ids = lay.members()
    for i, v in enumerate(lk.tolist()):
        last[v] = i
        recent = set(sorted(last, key=last.get, reverse=True)[:k])
        if v in queue:
            hits += 1
            if v in unused:
                used += 1
                unused.discard(v)
            queue.remove(v)
            queue.insert(0, v)
            continue
        misses += 1
        queue.insert(0, v)
        while len(queue) > cap:
            unused.discard(queue.pop())
        b = lay.block_of[v]
        for w in ids[ptr[b]:ptr[b + 1]].tolist():
            if w != v and w not in queue and w in recent:
                queue.insert(0, w)
                unused.add(w)
                admitted += 1
                while len(queue) > cap:
                    unused.discard(queue.pop())
    return hits, misses, admitted, used


@settings(max_examples=80, deadline=None)
@given(instances(), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_shadow_is_a_plain_lru_of_demands(inst, m):
    lay, lk, cap, _ = inst
    got = simulate_lookups(lk, lay, CacheConfig(cap, ShadowAdmit(m)))
    assert _tuple(got) == _shadow_by_recency(lay, lk, cap, m)


@settings(max_examples=80, deadline=None)
@given(instances())
def test_policy_identities(inst):
    lay, lk, cap, counts = inst
    cfg = lambda pol: CacheConfig(cap, pol)
    allm = simulate_lookups(lk, lay, cfg(PrefetchAll()))
    assert simulate_lookups(lk, lay, cfg(FreqThreshold(-1, counts))) == allm
    assert simulate_lookups(lk, lay, cfg(InsertAt(0.0))) == allm
    assert simulate_lookups(lk, lay, cfg(FreqThreshold(int(counts.max()), counts))) == \
        simulate_lookups(lk, lay, cfg(NoPrefetch()))


@settings(max_examples=80, deadline=None)
@given(instances())
def test_no_prefetch_eb_fraction(inst):
    lay, lk, cap, _ = inst
    assert simulate_lookups(lk, lay, CacheConfig(cap)).eb_fraction == 128 / 4096


def test_unlimited_no_prefetch():
    rng = np.random.default_rng(0)
    lk = rng.integers(0, 300, size=5000)
    m = simulate_lookups(lk, identity_layout(300, 32), CacheConfig(300))
    assert m.block_reads == len(np.unique(lk))
    assert m.eb_fraction == 0.03125


def test_prefetch_all_one_block_per_query():
    # 64 blocks of 32, each queried whole, in a shuffled id order
    n, B = 2048, 32
    rng = np.random.default_rng(1)
    queries = [Query(0, tuple(rng.permutation(np.arange(b * B, (b + 1) * B)).tolist())) for b in range(n // B)]
    tr = Trace.from_queries(queries, {0: n})
    lay = identity_layout(n, B)
    base = simulate(tr, lay, CacheConfig(n))
    allm = simulate(tr, lay, CacheConfig(n, PrefetchAll()))
    assert base.block_reads == n and allm.block_reads == n // B
    assert effective_bandwidth_increase(allm, base) == 3100.0
    assert allm.eb_fraction == 1.0


def test_ebi_example_and_errors():
    mk = lambda reads: SimMetrics(reads, 0, reads, reads, 0, 0, 1.0)
    assert effective_bandwidth_increase(mk(500), mk(1000)) == 100.0
    with pytest.raises(ZeroDivisionError):
        effective_bandwidth_increase(mk(0), mk(10))


def test_validation():
    lay = identity_layout(10, 2)
    with pytest.raises(LayoutMismatchError):
        simulate_lookups(np.array([10]), lay, CacheConfig(4))
    with pytest.raises(ValueError):
        simulate_lookups(np.array([], dtype=np.int64), lay, CacheConfig(4))
    with pytest.raises(ValueError):
        CacheConfig(0)
    with pytest.raises(ValueError):
        CacheConfig(4, vector_size_bytes=100)
    with pytest.raises(ValueError):
        InsertAt(1.5)
    with pytest.raises(ValueError):
        ShadowAdmit(0.5)
    with pytest.raises(ValueError):
        FreqThreshold(-2, np.zeros(10))


def test_prefetched_resident_keeps_rank():
    # block {0,1}; on the miss for 0 at step 5, resident 1 sits at the LRU end
    # and must stay there, so the final lookup of 1 misses
    lay = Layout.from_blocks([[0, 1], [2], [3]], 2, 4)
    m = simulate_lookups(np.array([1, 2, 1, 3, 0, 2, 1]), lay, CacheConfig(3, PrefetchAll()))
    assert _tuple(m) == (1, 6, 1, 0)
