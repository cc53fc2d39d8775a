"""k-means++ / Lloyd clustering and the cluster-ordered layouts built on it."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import stream
from ..workload import EmbeddingMatrix
from .base import Layout


@dataclass
class KMeansModel:
    centroids: np.ndarray
    assignment: np.ndarray
    sse_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dists(x, c):
    # direct differences, not the |x|^2 - 2xc + |c|^2 expansion: keeps argmin and SSE consistent
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)


def _assign(x, c):
    chunk = max(1, 4_000_000 // (len(c) * x.shape[1]))
    labels = np.empty(len(x), dtype=np.int64)
    best = np.empty(len(x))
    for a in range(0, len(x), chunk):
        d = _sq_dists(x[a:a + chunk], c)
        labels[a:a + chunk] = d.argmin(1)
        best[a:a + chunk] = d[np.arange(len(d)), labels[a:a + chunk]]
    return labels, best


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; duplicates are fine
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[i:i + 1])[:, 0])
    return centers


def kmeans(points: EmbeddingMatrix | np.ndarray, k: int, iters: int = 20, seed: int = 0) -> KMeansModel:
    """k-means++ seeding followed by up to ``iters`` Lloyd rounds.

    ``sse_history[0]`` is the SSE of the seeding assignment; each later entry
    follows one Lloyd round. Empty clusters take the point farthest from its
    centroid.
    """
    x = np.asarray(points.values if isinstance(points, EmbeddingMatrix) else points, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = stream("kmeans", seed)
    centers = _kmeanspp(x, k, rng)
    labels, best = _assign(x, centers)
    history = [float(best.sum())]
    for _ in range(iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            far = int(np.argmax(best))
            centers[c] = x[far]
            best[far] = 0.0
        new_labels, best = _assign(x, centers)
        history.append(float(best.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansModel(centers, labels, history)


def kmeans_layout(points: EmbeddingMatrix, k: int, B: int, iters: int = 20, seed: int = 0) -> Layout:
    model = kmeans(points, k, iters, seed)
    order = np.lexsort((np.arange(len(model.assignment)), model.assignment))
    return Layout.from_order(order, B, algorithm="kmeans", seed=seed)


def recursive_kmeans_layout(points: EmbeddingMatrix, k1: int = 256, k2: int = 32, B: int = 32,
                            iters: int = 20, seed: int = 0) -> Layout:
    """Cluster into ``k1`` groups, then sub-cluster each into ``min(k2, size)``."""
    if k1 < 1 or k2 < 1:
        raise ValueError("k1 and k2 must be >= 1")
    x = np.asarray(points.values, dtype=np.float64)
    top = kmeans(x, k1, iters, seed)
    sub = np.zeros(len(x), dtype=np.int64)
    for c in range(k1):
        idx = np.flatnonzero(top.assignment == c)
        if len(idx) == 0:
            continue
        inner = kmeans(x[idx], min(k2, len(idx)), iters, seed + c)
        sub[idx] = inner.assignment
    order = np.lexsort((np.arange(len(x)), sub, top.assignment))
    return Layout.from_order(order, B, algorithm="recursive_kmeans", seed=seed)
