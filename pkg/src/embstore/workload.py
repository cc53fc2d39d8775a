"""Trace data model, JSONL ingestion, synthetic planted-group workloads."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .rng import stream


class TraceFormatError(ValueError):
    """A trace file line could not be parsed."""


class TraceValidationError(ValueError):
    """A trace refers to an unknown table or an out-of-range vector id."""


@dataclass(frozen=True)
class Query:
    table: int
    ids: tuple[int, ...]


@dataclass
class Trace:
    """Ordered lookup queries stored column-wise.

    ``ids[offsets[j]:offsets[j + 1]]`` are the vector ids of query ``j``,
    which belongs to table ``query_table[j]``.
    """

    tables: dict[int, int]
    query_table: np.ndarray
    offsets: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.tables = {int(t): int(n) for t, n in sorted(self.tables.items())}
        self.query_table = np.asarray(self.query_table, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(self.offsets) != len(self.query_table) + 1:
            raise ValueError("offsets must have one more entry than queries")

    @classmethod
    def from_queries(cls, queries: Iterable[Query], tables: dict[int, int]) -> "Trace":
        qt, lens, flat = [], [], []
        for q in queries:
            qt.append(q.table)
            lens.append(len(q.ids))
            flat.extend(q.ids)
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        trace = cls(dict(tables), np.array(qt, dtype=np.int64), offsets, np.array(flat, dtype=np.int64))
        trace.validate()
        return trace

    @classmethod
    def empty(cls, tables: dict[int, int]) -> "Trace":
        z = np.zeros(0, dtype=np.int64)
        return cls(dict(tables), z, np.zeros(1, dtype=np.int64), z)

    def validate(self) -> None:
        lens = np.diff(self.offsets)
        if np.any(lens <= 0):
            j = int(np.flatnonzero(lens <= 0)[0])
            raise TraceValidationError(f"query {j} is empty")
        for t in np.unique(self.query_table):
            if int(t) not in self.tables:
                raise TraceValidationError(f"query refers to unknown table {int(t)}")
        if len(self.ids):
            if self.ids.min() < 0:
                raise TraceValidationError("negative vector id")
            limit = np.array([self.tables[int(t)] for t in self.query_table], dtype=np.int64)
            per_id = np.repeat(limit, lens)
            bad = np.flatnonzero(self.ids >= per_id)
            if len(bad):
                j = int(np.searchsorted(self.offsets, bad[0], side="right") - 1)
                raise TraceValidationError(
                    f"query {j}: id {int(self.ids[bad[0]])} >= n={int(per_id[bad[0]])}"
                )

    @property
    def num_queries(self) -> int:
        return len(self.query_table)

    @property
    def num_lookups(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return self.num_queries

    @property
    def queries(self) -> Iterator[Query]:
        for j in range(self.num_queries):
            a, b = self.offsets[j], self.offsets[j + 1]
            yield Query(int(self.query_table[j]), tuple(int(v) for v in self.ids[a:b]))

    def query_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def slice(self, start: int, stop: int) -> "Trace":
        a, b = self.offsets[start], self.offsets[stop]
        return Trace(dict(self.tables), self.query_table[start:stop].copy(),
                     self.offsets[start:stop + 1] - a, self.ids[a:b].copy())

    def restrict(self, table: int) -> "Trace":
        """Sub-trace holding only the queries of ``table``."""
        _check_table(self, table)
        mask = self.query_table == table
        lens = np.diff(self.offsets)[mask]
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        keep = np.repeat(mask, np.diff(self.offsets))
        return Trace({table: self.tables[table]}, self.query_table[mask], offsets, self.ids[keep])

    def lookups(self, table: int) -> np.ndarray:
        """Flattened lookup sequence of one table, in arrival order."""
        _check_table(self, table)
        keep = np.repeat(self.query_table == table, np.diff(self.offsets))
        return self.ids[keep]

    def table_queries(self, table: int) -> list[np.ndarray]:
        r = self.restrict(table)
        return [r.ids[r.offsets[j]:r.offsets[j + 1]] for j in range(r.num_queries)]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.tables == other.tables
                and np.array_equal(self.query_table, other.query_table)
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.ids, other.ids))


def _check_table(trace: Trace, table: int) -> None:
    if table not in trace.tables:
        raise ValueError(f"unknown table {table}")


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("embedding matrix must be n x d with d > 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WorkloadSpec:
    tables: int = 1
    n: int = 32768
    d: int = 16
    groups: int = 1024
    group_size: int = 32
    zipf_alpha: float = 0.0
    query_len: tuple[float, int, int] = (8, 8, 8)
    num_queries: int = 10000
    noise: float = 0.0

    def __post_init__(self):
        mean, lo, hi = self.query_len
        if self.tables < 1 or self.n < 1 or self.d < 1:
            raise ValueError("tables, n and d must be positive")
        if self.groups < 1 or self.group_size < 1 or self.groups * self.group_size > self.n:
            raise ValueError("need 1 <= groups * group_size <= n")
        if self.zipf_alpha < 0:
            raise ValueError("zipf_alpha must be >= 0")
        if not (1 <= lo <= mean <= hi):
            raise ValueError("query_len must satisfy 1 <= min <= mean <= max")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if self.num_queries < 0:
            raise ValueError("num_queries must be >= 0")


@dataclass(frozen=True)
class Histogram:
    """Access-count histogram; bucket ``(0, 0)`` holds never-accessed vectors."""

    buckets: tuple[tuple[int, int, int], ...]  # (lo, hi, count), hi inclusive

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {(lo, hi): c for lo, hi, c in self.buckets}


def zipf_weights(k: int, alpha: float) -> np.ndarray:
    w = np.arange(1, k + 1, dtype=np.float64) ** -alpha
    return w / w.sum()


def _draw_lengths(rng: np.random.Generator, spec: WorkloadSpec, size: int) -> np.ndarray:
    mean, lo, hi = spec.query_len
    if lo == hi:
        return np.full(size, int(lo), dtype=np.int64)
    return np.clip(int(lo) + rng.poisson(mean - lo, size=size), int(lo), int(hi)).astype(np.int64)


def _draw_members(rng, members, group_of_query, lens):
    """Uniform draws from each query's group: without replacement when the
    query fits in the group, with replacement otherwise."""
    gs = members.shape[1]
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    qidx = np.repeat(np.arange(len(lens)), lens)
    pos = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    col = np.empty(total, dtype=np.int64)
    short = lens <= gs
    if short.any():
        # rank of random keys gives a random permutation prefix per query
        rows = np.flatnonzero(short)
        step = max(1, 2_000_000 // gs)
        perm = np.empty((len(rows), gs), dtype=np.int64)
        for a in range(0, len(rows), step):
            perm[a:a + step] = np.argsort(rng.random((min(step, len(rows) - a), gs)), axis=1)
        row_of = np.full(len(lens), -1, dtype=np.int64)
        row_of[rows] = np.arange(len(rows))
        m = short[qidx]
        col[m] = perm[row_of[qidx[m]], pos[m]]
    if (~short).any():
        m = ~short[qidx]
        col[m] = rng.integers(0, gs, size=int(m.sum()))
    return members[group_of_query[qidx], col].astype(np.int64)


def _generate_table(spec: WorkloadSpec, seed: int, table: int):
    rng = stream("workload", seed, table)
    members = rng.permutation(spec.n)[: spec.groups * spec.group_size]
    members = members.reshape(spec.groups, spec.group_size)

    cdf = np.cumsum(zipf_weights(spec.groups, spec.zipf_alpha))
    cdf[-1] = 1.0
    group_of_query = np.searchsorted(cdf, rng.random(spec.num_queries), side="right")
    lens = _draw_lengths(rng, spec, spec.num_queries)

    ids = _draw_members(rng, members, group_of_query, lens)
    if spec.noise > 0 and len(ids):
        swap = rng.random(len(ids)) < spec.noise
        ids = ids.copy()
        ids[swap] = rng.integers(0, spec.n, size=int(swap.sum()))

    # group centroids, jitter at 0.05 x median nearest-centroid spacing
    centroids = rng.standard_normal((spec.groups, spec.d))
    if spec.groups > 1:
        # centroids are iid, so the first 1024 are a fair sample for the median
        probe = centroids[:1024]
        sq = (centroids ** 2).sum(1)
        d2 = (probe ** 2).sum(1)[:, None] + sq[None, :] - 2 * probe @ centroids.T
        d2[np.arange(len(probe)), np.arange(len(probe))] = np.inf
        spacing = float(np.median(np.sqrt(np.maximum(d2.min(1), 0))))
    else:
        spacing = 1.0
    values = rng.standard_normal((spec.n, spec.d))  # ungrouped vectors stay diffuse
    values[members.ravel()] = (np.repeat(centroids, spec.group_size, axis=0)
                               + 0.05 * spacing * rng.standard_normal((members.size, spec.d)))
    return ids.astype(np.int64), lens, EmbeddingMatrix(values.astype(np.float32))


def generate_workload(spec: WorkloadSpec, seed: int) -> tuple[Trace, dict[int, EmbeddingMatrix]]:
    """Planted-group synthetic trace plus per-table embeddings.

    Queries of all tables are interleaved by a seeded shuffle.
    """
    per_table = [_generate_table(spec, seed, t) for t in range(spec.tables)]
    embeddings = {t: emb for t, (_, _, emb) in enumerate(per_table)}
    if spec.tables == 1:
        ids, lens, _ = per_table[0]
        qt = np.zeros(len(lens), dtype=np.int64)
    else:
        rng = stream("interleave", seed)
        qt = np.repeat(np.arange(spec.tables), spec.num_queries)
        qt = qt[rng.permutation(len(qt))]
        all_ids = np.concatenate([ids for ids, _, _ in per_table])
        base = np.cumsum([0] + [len(ids) for ids, _, _ in per_table])
        starts_t = [b + np.concatenate([[0], np.cumsum(l)[:-1]]) for b, (_, l, _) in zip(base, per_table)]
        lens = np.empty(len(qt), dtype=np.int64)
        starts = np.empty(len(qt), dtype=np.int64)
        for t, (_, tl, _) in enumerate(per_table):
            where = np.flatnonzero(qt == t)
            lens[where] = tl
            starts[where] = starts_t[t]
        gather = np.repeat(starts, lens) + (np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens))
        ids = all_ids[gather]
    offsets = np.zeros(len(lens) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    trace = Trace({t: spec.n for t in range(spec.tables)}, qt, offsets, ids)
    return trace, embeddings


def group_members(spec: WorkloadSpec, seed: int, table: int = 0) -> np.ndarray:
    """Ground-truth latent groups (groups x group_size) of a generated table."""
    rng = stream("workload", seed, table)
    return rng.permutation(spec.n)[: spec.groups * spec.group_size].reshape(spec.groups, spec.group_size)


def split(trace: Trace, fraction: float) -> tuple[Trace, Trace]:
    """First ceil(fraction * queries) queries train, the rest evaluate."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    if trace.num_queries == 0:
        raise ValueError("cannot split an empty trace")
    cut = math.ceil(fraction * trace.num_queries)
    return trace.slice(0, cut), trace.slice(cut, trace.num_queries)


def access_counts_array(trace: Trace, table: int) -> np.ndarray:
    return np.bincount(trace.lookups(table), minlength=trace.tables[table]).astype(np.int64)


def access_histogram(trace: Trace, table: int) -> Histogram:
    counts = access_counts_array(trace, table)
    buckets = [(0, 0, int((counts == 0).sum()))]
    top = int(counts.max()) if len(counts) else 0
    lo = 1
    while lo <= top:
        hi = lo * 10 - 1
        buckets.append((lo, hi, int(((counts >= lo) & (counts <= hi)).sum())))
        lo *= 10
    return Histogram(tuple(buckets))


def compulsory_miss_rate(trace: Trace, table: int) -> float:
    lk = trace.lookups(table)
    if len(lk) == 0:
        raise ValueError(f"table {table} has no lookups")
    return len(np.unique(lk)) / len(lk)


# -- file formats -----------------------------------------------------------

def write_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t, n in trace.tables.items():
            f.write(json.dumps({"header": True, "table": t, "n": n}) + "\n")
        for j in range(trace.num_queries):
            a, b = trace.offsets[j], trace.offsets[j + 1]
            rec = {"table": int(trace.query_table[j]), "ids": trace.ids[a:b].tolist()}
            f.write(json.dumps(rec) + "\n")


def load_trace(path: str | Path) -> Trace:
    tables: dict[int, int] = {}
    qt: list[int] = []
    lens: list[int] = []
    flat: list[int] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("header"):
                    tables[int(rec["table"])] = int(rec["n"])
                    continue
                table = int(rec["table"])
                ids = [int(v) for v in rec["ids"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as e:
                raise TraceFormatError(f"{path}:{lineno}: {e}") from e
            if table not in tables:
                raise TraceValidationError(f"{path}:{lineno}: table {table} has no header")
            n = tables[table]
            if not ids:
                raise TraceValidationError(f"{path}:{lineno}: empty query")
            for v in ids:
                if not 0 <= v < n:
                    raise TraceValidationError(f"{path}:{lineno}: id {v} outside [0, {n})")
            qt.append(table)
            lens.append(len(ids))
            flat.extend(ids)
    offsets = np.zeros(len(lens) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    return Trace(tables, np.array(qt, dtype=np.int64), offsets, np.array(flat, dtype=np.int64))


def write_embeddings(emb: EmbeddingMatrix, path: str | Path) -> None:
    """Writes ``path`` (raw little-endian f32, row-major) and ``path.json``."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(emb.values, dtype="<f4").tobytes())
    header = {"n": emb.n, "d": emb.d, "dtype": "f32", "order": "row-major"}
    Path(str(path) + ".json").write_text(json.dumps(header))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    if header.get("dtype") != "f32" or header.get("order") != "row-major":
        raise ValueError(f"unsupported embedding header {header}")
    n, d = int(header["n"]), int(header["d"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != n * d:
        raise ValueError(f"{path}: expected {n * d} floats, found {raw.size}")
    return EmbeddingMatrix(raw.reshape(n, d).astype(np.float32))
