"""LRU stack distances and exact hit-rate curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

COMPULSORY = 0  # marker for a first reference; real distances start at 1


@numba.njit(cache=True, nogil=True)
def _stack_distances(lookups, n_ids):
    m = len(lookups)
    out = np.zeros(m, dtype=np.int64)
    last = np.full(n_ids, -1, dtype=np.int64)
    tree = np.zeros(m + 1, dtype=np.int64)  # Fenwick over access times, 1 = most recent access of some id
    for i in range(m):
        v = lookups[i]
        t = last[v]
        if t >= 0:
            # distinct ids touched at times > t, plus v itself
            s = 0
            j = i
            while j > 0:
                s += tree[j]
                j -= j & -j
            j = t + 1
            while j > 0:
                s -= tree[j]
                j -= j & -j
            out[i] = s + 1
            j = t + 1
            while j <= m:
                tree[j] -= 1
                j += j & -j
        else:
            out[i] = COMPULSORY
        j = i + 1
        while j <= m:
            tree[j] += 1
            j += j & -j
        last[v] = i
    return out


def stack_distances(lookups: Sequence[int]) -> np.ndarray:
    """Per-lookup LRU rank (1 = MRU) or ``COMPULSORY`` on first reference."""
    arr = np.asarray(lookups, dtype=np.int64)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if arr.min() < 0:
        raise ValueError("ids must be non-negative")
    # compact ids so the last-access table stays small
    uniq, dense = np.unique(arr, return_inverse=True)
    return _stack_distances(dense.astype(np.int64).ravel(), len(uniq))


def naive_stack_distances(lookups: Sequence[int]) -> list[int]:
    """O(n^2) list-walk reference."""
    stack: list[int] = []
    out = []
    for v in lookups:
        if v in stack:
            r = stack.index(v)
            out.append(r + 1)
            del stack[r]
        else:
            out.append(COMPULSORY)
        stack.insert(0, v)
    return out


@dataclass(frozen=True)
class HitRateCurve:
    sizes: np.ndarray
    hit_rates: np.ndarray

    @property
    def points(self) -> list[tuple[int, float]]:
        return [(int(s), float(h)) for s, h in zip(self.sizes, self.hit_rates)]


def hit_counts(series: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Number of lookups with numeric distance <= s, per size."""
    series = np.asarray(series, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    hist = np.bincount(series[series > 0])
    cum = np.cumsum(hist)  # cum[d] = lookups with distance in [1, d]
    idx = np.minimum(sizes, len(cum) - 1)
    return cum[idx] if len(cum) else np.zeros(len(sizes), dtype=np.int64)


def hit_rate_curve(series: np.ndarray, sizes: Sequence[int]) -> HitRateCurve:
    series = np.asarray(series)
    if series.size == 0:
        raise ValueError("empty stack distance series")
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0 or sizes[0] < 1 or np.any(np.diff(sizes) <= 0):
        raise ValueError("sizes must be strictly increasing and >= 1")
    return HitRateCurve(sizes, hit_counts(series, sizes) / series.size)


def write_curve_csv(curve: HitRateCurve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["size", "hit_rate"])
        for s, h in curve.points:
            w.writerow([s, repr(h)])


def write_histogram_csv(hist, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bucket_lo", "bucket_hi", "count"])
        for lo, hi, c in hist.buckets:
            w.writerow([lo, hi, c])
