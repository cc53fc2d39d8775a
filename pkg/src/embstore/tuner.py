"""Miniature-cache threshold selection and DRAM allocation across tables."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .cache import CacheConfig, FreqThreshold, NoPrefetch, SimMetrics, effective_bandwidth_increase, simulate_lookups
from .layout import Layout
from .workload import Trace

DEFAULT_CANDIDATES = (0, 5, 10, 15, 20, 30, 50)


@dataclass(frozen=True)
class SamplingSpec:
    rate: float = 1.0
    seed: int = 0
    unit: str = "block"  # "block": hash block ids (whole blocks kept); "id": hash vector ids

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("sampling rate must lie in (0, 1]")
        if self.unit not in ("id", "block"):
            raise ValueError("unit must be 'id' or 'block'")

    @property
    def modulus(self) -> int:
        return int(math.floor(1.0 / self.rate + 1e-9))


def spatial_hash(keys: np.ndarray, table: int, seed: int) -> np.ndarray:
    """splitmix64 of (seed, table, key); uint64 per key."""
    with np.errstate(over="ignore"):
        salt = np.uint64((seed * 0x9E3779B97F4A7C15 + table * 0xD1B54A32D192ED03) & 0xFFFFFFFFFFFFFFFF)
        z = np.asarray(keys, dtype=np.uint64) ^ salt
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def sampled_mask(layout: Layout, table: int, spec: SamplingSpec) -> np.ndarray:
    """Boolean mask over vector ids kept by the miniature cache."""
    N = spec.modulus
    if N <= 1:
        return np.ones(layout.n, dtype=bool)
    if spec.unit == "id":
        keys = np.arange(layout.n)
    else:
        keys = layout.block_of
    return spatial_hash(keys, table, spec.seed) % np.uint64(N) == 0


@dataclass
class Miniature:
    """Down-sampled replay inputs; ids are renumbered densely."""

    lookups: np.ndarray
    capacity: int
    layout: Layout
    counts: np.ndarray
    kept_ids: np.ndarray  # original id of each dense id
    query_offsets: np.ndarray

    @property
    def trace(self) -> Trace:
        nq = len(self.query_offsets) - 1
        return Trace({0: self.layout.n}, np.zeros(nq, dtype=np.int64), self.query_offsets, self.lookups)


def miniaturize(eval_trace: Trace, layout: Layout, counts: np.ndarray, capacity: int,
                spec: SamplingSpec, table: int | None = None) -> Miniature:
    if table is None:
        table = _only_table(eval_trace)
    ev = eval_trace.restrict(table)
    keep = sampled_mask(layout, table, spec)
    kept_ids = np.flatnonzero(keep)
    dense = np.full(layout.n, -1, dtype=np.int64)
    dense[kept_ids] = np.arange(len(kept_ids))

    hit = keep[ev.ids]
    per_query = np.add.reduceat(hit.astype(np.int64), ev.offsets[:-1]) if ev.num_queries else np.zeros(0, np.int64)
    lens = per_query[per_query > 0]
    offsets = np.zeros(len(lens) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    lookups = dense[ev.ids[hit]]

    # surviving blocks keep their slot order
    ptr, ids = layout.members()
    blocks = []
    for b in range(layout.num_blocks):
        members = ids[ptr[b]:ptr[b + 1]]
        members = members[keep[members]]
        if len(members):
            blocks.append(dense[members])
    mini_layout = Layout.from_blocks(blocks, layout.B, len(kept_ids), algorithm=layout.algorithm, seed=layout.seed)
    mini_capacity = max(1, round(capacity * spec.rate)) if spec.modulus > 1 else capacity
    return Miniature(lookups, mini_capacity, mini_layout, np.asarray(counts)[kept_ids], kept_ids, offsets)


def _only_table(trace: Trace) -> int:
    tables = set(trace.query_table.tolist()) or set(trace.tables)
    if len(tables) != 1:
        raise ValueError("trace spans several tables; pass table=")
    return tables.pop()


@dataclass(frozen=True)
class CandidateResult:
    t: int
    block_reads: int
    ebi_percent: float
    hit_rate: float


@dataclass(frozen=True)
class ThresholdReport:
    capacity: int
    mini_capacity: int
    rate: float
    baseline_block_reads: int
    candidates: tuple[CandidateResult, ...]
    chosen: int

    def result(self, t: int) -> CandidateResult:
        return next(c for c in self.candidates if c.t == t)

    def to_dict(self) -> dict:
        return asdict(self)


def _pick(results: Sequence[CandidateResult]) -> int:
    # fewest block reads, ties go to the largest threshold
    return min(results, key=lambda r: (r.block_reads, -r.t)).t


def select_threshold(eval_trace: Trace, layout: Layout, counts: np.ndarray, capacity: int,
                     candidates: Sequence[int] = DEFAULT_CANDIDATES,
                     spec: SamplingSpec = SamplingSpec(), table: int | None = None,
                     vector_size_bytes: int = 128, block_size_bytes: int = 4096) -> ThresholdReport:
    if not candidates:
        raise ValueError("no threshold candidates")
    mini = miniaturize(eval_trace, layout, counts, capacity, spec, table)
    if len(mini.lookups) == 0:
        raise ValueError(f"sampling at rate {spec.rate} kept no lookups")

    def run(policy) -> SimMetrics:
        cfg = CacheConfig(mini.capacity, policy, block_size_bytes, vector_size_bytes)
        return simulate_lookups(mini.lookups, mini.layout, cfg)

    base = run(NoPrefetch())
    results = []
    for t in sorted(set(int(t) for t in candidates)):
        m = run(FreqThreshold(t, mini.counts))
        results.append(CandidateResult(t, m.block_reads, effective_bandwidth_increase(m, base), m.hit_rate))
    return ThresholdReport(capacity, mini.capacity, spec.rate, base.block_reads, tuple(results), _pick(results))


@dataclass(frozen=True)
class GainPoint:
    size: int
    best_t: int
    ebi_percent: float
    hit_rate: float       # concave-envelope value
    raw_hit_rate: float   # winning miniature simulation


def gain_curve(eval_trace: Trace, layout: Layout, counts: np.ndarray, sizes: Sequence[int],
               spec: SamplingSpec = SamplingSpec(), candidates: Sequence[int] = DEFAULT_CANDIDATES,
               table: int | None = None, **sizes_kw) -> list[GainPoint]:
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    reports = [select_threshold(eval_trace, layout, counts, s, candidates, spec, table, **sizes_kw)
               for s in sizes]
    return curve_from_reports(reports)


def curve_from_reports(reports: Sequence[ThresholdReport]) -> list[GainPoint]:
    """Winning point per size; hit rates made monotone then concave-enveloped."""
    sizes = [r.capacity for r in reports]
    raw = [r.result(r.chosen).hit_rate for r in reports]
    env = concave_envelope([0] + sizes, [0.0] + list(np.maximum.accumulate(raw)))
    return [GainPoint(s, r.chosen, r.result(r.chosen).ebi_percent, float(env(s)), h)
            for s, r, h in zip(sizes, reports, raw)]


# -- allocation -----------------------------------------------------------------

def concave_envelope(xs: Sequence, ys: Sequence):
    """Upper concave envelope of points, as a piecewise-linear callable.

    Arithmetic stays in the input number type, so Fractions give exact results.
    """
    pts = sorted(zip(xs, ys))
    hull: list[tuple] = []
    for x, y in pts:
        if hull and hull[-1][0] == x:
            if y <= hull[-1][1]:
                continue
            hull.pop()
        # drop points on or below the chord from hull[-2] to the new point
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (x - x1) <= (y - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append((x, y))

    def f(x):
        if x < hull[0][0] or x > hull[-1][0]:
            raise ValueError(f"{x} outside curve domain [{hull[0][0]}, {hull[-1][0]}]")
        for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
            if x1 <= x <= x2:
                if x == x2:
                    return y2
                return y1 + (y2 - y1) * (x - x1) / (x2 - x1)
        return hull[0][1]

    return f


@dataclass(frozen=True)
class Allocation:
    sizes: dict
    budget: int
    chunk: int

    def to_json(self) -> str:
        return json.dumps({"budget": self.budget, "chunk": self.chunk,
                           "sizes": {str(k): v for k, v in sorted(self.sizes.items())}},
                          sort_keys=True, indent=2)


def allocate(curves: Mapping[int, Sequence[tuple]], lookup_weights: Mapping[int, float],
             budget: int, chunk: int) -> Allocation:
    """Greedy chunk-by-chunk DRAM split maximising weighted hit rate.

    ``curves[table]`` is a list of ``(size, hit_rate)``; a missing size-0 point
    is taken as hit rate 0.
    """
    if chunk < 1 or budget < 0 or budget % chunk:
        raise ValueError("budget must be a non-negative multiple of chunk")
    envs = {}
    for table, pts in curves.items():
        pts = list(pts)
        if not any(s == 0 for s, _ in pts):
            pts.append((0, 0))
        if max(s for s, _ in pts) < budget:
            raise ValueError(f"curve of table {table} does not reach the budget {budget}")
        envs[table] = concave_envelope([s for s, _ in pts], [h for _, h in pts])
    tables = sorted(envs)
    given = {t: 0 for t in tables}
    for _ in range(budget // chunk):
        best, best_gain = None, None
        for t in tables:
            w = lookup_weights[t]
            g = w * envs[t](given[t] + chunk) - w * envs[t](given[t])
            if best_gain is None or g > best_gain:
                best, best_gain = t, g
        given[best] += chunk
    return Allocation(given, budget, chunk)


def weighted_hits(curves: Mapping[int, Sequence[tuple]], lookup_weights: Mapping[int, float],
                  sizes: Mapping[int, int]):
    """Objective value of an allocation on the concave envelopes."""
    total = 0
    for t, pts in curves.items():
        pts = list(pts)
        if not any(s == 0 for s, _ in pts):
            pts.append((0, 0))
        env = concave_envelope([s for s, _ in pts], [h for _, h in pts])
        total += lookup_weights[t] * env(sizes[t])
    return total
