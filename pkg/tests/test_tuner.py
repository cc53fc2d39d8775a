from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embstore.cache import CacheConfig, FreqThreshold, NoPrefetch, effective_bandwidth_increase, simulate
from embstore.layout import random_layout, shp_layout, training_access_counts
from embstore.tuner import (CandidateResult, SamplingSpec, allocate, concave_envelope, gain_curve, miniaturize,
                            sampled_mask, select_threshold, weighted_hits, _pick)
from embstore.workload import WorkloadSpec, generate_workload, split

from conftest import traces
from oracles import brute_force_allocation, upper_hull, interpolate


@pytest.fixture(scope="module")
def skewed():
    spec = WorkloadSpec(n=8192, groups=1024, group_size=8, zipf_alpha=1.0, noise=0.05,
                        query_len=(4, 2, 32), num_queries=40_000)
    trace, _ = generate_workload(spec, 7)
    train, ev = split(trace, 0.5)
    lay = shp_layout(train, spec.n, 32, 8, 0)
    return ev, lay, training_access_counts(train, 0, spec.n)


def test_sampling_spec_validation():
    with pytest.raises(ValueError):
        SamplingSpec(0.0)
    with pytest.raises(ValueError):
        SamplingSpec(0.5, unit="query")
    assert SamplingSpec(0.01).modulus == 100
    assert SamplingSpec(1 / 3).modulus == 3


@pytest.mark.parametrize("unit", ["id", "block"])
def test_rate_one_is_identity(skewed, unit):
    ev, lay, counts = skewed
    mini = miniaturize(ev, lay, counts, 500, SamplingSpec(1.0, 3, unit))
    assert mini.capacity == 500
    assert mini.trace == ev
    assert mini.layout == lay


def test_rate_one_matches_full_sweep(skewed):
    ev, lay, counts = skewed
    rep = select_threshold(ev, lay, counts, 700, (0, 5, 10, 20), SamplingSpec(1.0))
    base = simulate(ev, lay, CacheConfig(700))
    for c in rep.candidates:
        full = simulate(ev, lay, CacheConfig(700, FreqThreshold(c.t, counts)))
        assert c.block_reads == full.block_reads
        assert c.ebi_percent == effective_bandwidth_increase(full, base)
    assert rep.baseline_block_reads == base.block_reads


@pytest.mark.parametrize("unit", ["id", "block"])
def test_sampled_fraction_within_3_sigma(unit):
    n, rate = 100_000, 0.01
    lay = random_layout(n, 32, 0)
    mask = sampled_mask(lay, 0, SamplingSpec(rate, 9, unit))
    units = n if unit == "id" else lay.num_blocks
    kept = mask.sum() if unit == "id" else len(np.unique(lay.block_of[mask]))
    sigma = np.sqrt(units * rate * (1 - rate))
    assert abs(kept - units * rate) <= 3 * sigma


@settings(max_examples=40, deadline=None)
@given(traces(max_n=60), st.sampled_from([0.5, 0.25, 0.1]), st.integers(0, 50), st.sampled_from(["id", "block"]))
def test_sampled_ids_keep_their_reuse_sequence(tr, rate, seed, unit):
    n = tr.tables[0]
    lay = random_layout(n, 4, seed)
    mini = miniaturize(tr, lay, np.zeros(n, int), 10, SamplingSpec(rate, seed, unit))
    full_kept = tr.ids[np.isin(tr.ids, mini.kept_ids)]
    assert mini.kept_ids[mini.lookups].tolist() == full_kept.tolist()
    assert mini.capacity == max(1, round(10 * rate))
    mini.layout.check()
    # each mini block is a subset of one original block, slot order kept
    for blk in mini.layout.blocks():
        orig = mini.kept_ids[blk]
        assert len(set(lay.block_of[orig].tolist())) == 1
        assert list(lay.slot_of[orig]) == sorted(lay.slot_of[orig])


def test_tie_break_prefers_largest_t():
    rs = [CandidateResult(0, 10, 0, 0), CandidateResult(5, 9, 0, 0), CandidateResult(10, 9, 0, 0),
          CandidateResult(20, 11, 0, 0)]
    assert _pick(rs) == 10


def test_single_candidate_gain_curve(skewed):
    ev, lay, counts = skewed
    spec = SamplingSpec(0.1, 0)
    (pt,) = gain_curve(ev, lay, counts, [800], spec, candidates=(10,))
    rep = select_threshold(ev, lay, counts, 800, (10,), spec)
    assert pt.best_t == rep.chosen == 10
    assert pt.ebi_percent == rep.result(10).ebi_percent
    assert pt.raw_hit_rate == rep.result(10).hit_rate


def test_gain_curve_monotone(skewed):
    ev, lay, counts = skewed
    pts = gain_curve(ev, lay, counts, [100, 300, 900, 2700], SamplingSpec(0.1, 1))
    hr = [p.hit_rate for p in pts]
    assert all(a <= b for a, b in zip(hr, hr[1:]))
    with pytest.raises(ValueError):
        gain_curve(ev, lay, counts, [300, 100])


def test_chosen_threshold_positive_gain(skewed):
    ev, lay, counts = skewed
    for s in (200, 800):
        rep = select_threshold(ev, lay, counts, s, spec=SamplingSpec(1.0))
        full = simulate(ev, lay, CacheConfig(s, FreqThreshold(rep.chosen, counts)))
        assert effective_bandwidth_increase(full, simulate(ev, lay, CacheConfig(s, NoPrefetch()))) > 0


# -- allocation ---------------------------------------------------------------------

def test_allocation_symmetry():
    curve = [(0, 0), (10, 0.5), (20, 0.7)]
    a = allocate({0: curve, 1: curve}, {0: 1, 1: 1}, 20, 10)
    assert a.sizes == {0: 10, 1: 10}


def test_flat_curve_gets_nothing():
    a = allocate({0: [(0, 0.3), (40, 0.3)], 1: [(0, 0), (40, 0.9)]}, {0: 5, 1: 1}, 40, 10)
    assert a.sizes == {0: 0, 1: 40}


def test_allocation_errors():
    with pytest.raises(ValueError):
        allocate({0: [(0, 0), (10, 1)]}, {0: 1}, 15, 10)
    with pytest.raises(ValueError):
        allocate({0: [(0, 0), (10, 1)]}, {0: 1}, 20, 10)


def test_envelope_matches_brute_force_hull():
    rng = np.random.default_rng(0)
    for _ in range(100):
        xs = sorted(set(rng.integers(0, 50, size=6).tolist()) | {0})
        ys = [Fraction(int(v), 7) for v in rng.integers(0, 30, size=len(xs))]
        env = concave_envelope(xs, ys)
        hull = upper_hull(list(zip(xs, ys)))
        for x in range(0, xs[-1] + 1):
            assert env(x) == interpolate(hull, x)


fracs = st.fractions(min_value=0, max_value=1, max_denominator=20)


@st.composite
def allocation_instances(draw):
    k = draw(st.integers(1, 3))
    chunk = draw(st.integers(1, 4))
    steps = draw(st.integers(0, 6))
    budget = chunk * steps
    curves, weights = {}, {}
    for t in range(k):
        top = max(1, budget)
        inner = draw(st.lists(st.integers(1, top), max_size=min(6, top), unique=True))
        xs = sorted(set(inner) | {top})
        curves[t] = [(0, Fraction(0))] + [(x, draw(fracs)) for x in xs]
        weights[t] = draw(st.integers(1, 9))
    return curves, weights, budget, chunk


@settings(max_examples=300, deadline=None)
@given(allocation_instances())
def test_greedy_is_optimal(inst):
    curves, weights, budget, chunk = inst
    a = allocate(curves, weights, budget, chunk)
    assert sum(a.sizes.values()) == budget
    assert all(v % chunk == 0 and v >= 0 for v in a.sizes.values())
    assert weighted_hits(curves, weights, a.sizes) == brute_force_allocation(curves, weights, budget, chunk)
