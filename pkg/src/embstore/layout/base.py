from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..rng import stream
from ..workload import Trace


@dataclass
class Layout:
    """Placement of vectors ``0..n-1`` into blocks of at most ``B`` slots."""

    B: int
    block_of: np.ndarray
    slot_of: np.ndarray
    num_blocks: int
    algorithm: str = "identity"
    seed: int | None = None
    _members: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]], B: int, n: int, **meta) -> "Layout":
        block_of = np.full(n, -1, dtype=np.int64)
        slot_of = np.full(n, -1, dtype=np.int64)
        for b, members in enumerate(blocks):
            members = np.asarray(members, dtype=np.int64)
            if len(members) > B:
                raise ValueError(f"block {b} holds {len(members)} > B={B} vectors")
            if np.any(block_of[members] >= 0):
                raise ValueError("vector assigned twice")
            block_of[members] = b
            slot_of[members] = np.arange(len(members))
        if np.any(block_of < 0):
            raise ValueError("not every vector was assigned")
        return cls(B, block_of, slot_of, len(blocks), **meta)

    @classmethod
    def from_order(cls, order: Sequence[int], B: int, **meta) -> "Layout":
        """Chop a permutation into consecutive blocks of ``B``."""
        order = np.asarray(order, dtype=np.int64)
        n = len(order)
        blocks = [order[i:i + B] for i in range(0, n, B)]
        return cls.from_blocks(blocks, B, n, **meta)

    @property
    def n(self) -> int:
        return len(self.block_of)

    def members(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR view: ``ids[ptr[b]:ptr[b+1]]`` are block ``b``'s vectors in slot order."""
        if self._members is None:
            order = np.lexsort((self.slot_of, self.block_of))
            counts = np.bincount(self.block_of, minlength=self.num_blocks)
            ptr = np.zeros(self.num_blocks + 1, dtype=np.int64)
            np.cumsum(counts, out=ptr[1:])
            self._members = (ptr, order.astype(np.int64))
        return self._members

    def blocks(self) -> list[list[int]]:
        ptr, ids = self.members()
        return [ids[ptr[b]:ptr[b + 1]].tolist() for b in range(self.num_blocks)]

    def check(self) -> None:
        n = self.n
        if np.any((self.block_of < 0) | (self.block_of >= self.num_blocks)):
            raise ValueError("block id out of range")
        if np.any((self.slot_of < 0) | (self.slot_of >= self.B)):
            raise ValueError("slot out of range")
        pairs = self.block_of * self.B + self.slot_of
        if len(np.unique(pairs)) != n:
            raise ValueError("two vectors share a (block, slot)")

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (self.B == other.B and self.num_blocks == other.num_blocks
                and np.array_equal(self.block_of, other.block_of)
                and np.array_equal(self.slot_of, other.slot_of))

    def save(self, path: str | Path) -> None:
        """CSV ``vector_id,block_id,slot`` plus a ``.json`` header alongside."""
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["vector_id", "block_id", "slot"])
            for v in range(self.n):
                w.writerow([v, int(self.block_of[v]), int(self.slot_of[v])])
        header = {"n": self.n, "B": self.B, "num_blocks": self.num_blocks,
                  "algorithm": self.algorithm, "seed": self.seed}
        path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Layout":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        n = int(header["n"])
        block_of = np.full(n, -1, dtype=np.int64)
        slot_of = np.full(n, -1, dtype=np.int64)
        with open(path, newline="") as f:
            rows = csv.reader(f)
            next(rows)
            for v, b, s in rows:
                block_of[int(v)] = int(b)
                slot_of[int(v)] = int(s)
        lay = cls(int(header["B"]), block_of, slot_of, int(header["num_blocks"]),
                  header.get("algorithm", "unknown"), header.get("seed"))
        lay.check()
        return lay


def identity_layout(n: int, B: int) -> Layout:
    if n < 1 or B < 1:
        raise ValueError("n and B must be >= 1")
    v = np.arange(n, dtype=np.int64)
    return Layout(B, v // B, v % B, math.ceil(n / B), "identity")


def random_layout(n: int, B: int, seed: int) -> Layout:
    order = stream("random_layout", seed).permutation(n)
    return Layout.from_order(order, B, algorithm="random", seed=seed)


def average_fanout(layout: Layout, queries: Iterable[Sequence[int]]) -> float:
    """Mean number of distinct blocks touched per query."""
    total = 0
    count = 0
    for q in queries:
        ids = np.asarray(q, dtype=np.int64)
        total += len(np.unique(layout.block_of[ids]))
        count += 1
    if count == 0:
        raise ValueError("empty query list")
    return total / count


def trace_fanout(layout: Layout, trace: Trace) -> float:
    """Vectorised :func:`average_fanout` over every query of a single-table trace."""
    if trace.num_queries == 0:
        raise ValueError("empty query list")
    qidx = np.repeat(np.arange(trace.num_queries), trace.query_lengths())
    blocks = layout.block_of[trace.ids]
    pairs = np.unique(qidx * np.int64(layout.num_blocks) + blocks)
    return len(pairs) / trace.num_queries


def training_access_counts(train: Trace, table: int, n: int) -> np.ndarray:
    """Per-vector lookup counts over the training trace (duplicates count)."""
    return np.bincount(train.lookups(table), minlength=n).astype(np.int64)


def save_counts(counts: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vector_id", "count"])
        for v, c in enumerate(counts):
            w.writerow([v, int(c)])


def load_counts(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    out = np.zeros(len(rows), dtype=np.int64)
    for v, c in rows:
        out[int(v)] = int(c)
    return out
