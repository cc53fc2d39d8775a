"""Slow, obviously-correct reference implementations used as test oracles."""
import math


def reference_simulate(lookups, blocks_of, block_members, capacity, policy, p=0.0, mult=1.0,
                       t=0, counts=None):
    """List-based LRU replay; index 0 is the MRU end.

    ``policy`` is one of "none", "all", "insert", "shadow", "combined", "freq".
    """
    queue = []
    shadow = []
    shadow_cap = math.ceil(mult * capacity)
    unused = set()
    hits = misses = admitted = used = 0

    def evict():
        while len(queue) > capacity:
            unused.discard(queue.pop())

    for v in lookups:
        if policy in ("shadow", "combined"):
            if v in shadow:
                shadow.remove(v)
            shadow.insert(0, v)
            del shadow[shadow_cap:]
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
        evict()
        if policy == "none":
            continue
        for w in block_members[blocks_of[v]]:
            if w == v or w in queue:
                continue
            if policy == "all":
                pos = 0
            elif policy == "insert":
                pos = math.floor(p * len(queue))
            elif policy == "shadow":
                if w not in shadow:
                    continue
                pos = 0
            elif policy == "combined":
                pos = 0 if w in shadow else math.floor(p * len(queue))
            else:
                if counts[w] <= t:
                    continue
                pos = 0
            queue.insert(pos, w)
            unused.add(w)
            admitted += 1
            evict()
    return hits, misses, admitted, used


def interpolate(points, x):
    """Piecewise-linear value of sorted (x, y) points at x."""
    for (x1, y1), (x2, y2) in zip(points, points[1:]):
        if x1 <= x <= x2:
            return y1 if x == x1 else y1 + (y2 - y1) * (x - x1) / (x2 - x1)
    raise ValueError(x)


def upper_hull(points):
    """Upper concave hull by brute force: keep points not strictly below any chord."""
    best = {}
    for x, y in points:
        best[x] = max(best.get(x, y), y)
    pts = sorted(best.items())
    keep = []
    for i, (x, y) in enumerate(pts):
        below = False
        for a in range(i):
            for b in range(i + 1, len(pts)):
                (xa, ya), (xb, yb) = pts[a], pts[b]
                if (y - ya) * (xb - xa) <= (yb - ya) * (x - xa):
                    below = True
        if not below:
            keep.append((x, y))
    return keep


def brute_force_allocation(curves, weights, budget, chunk):
    """Best total weighted hull value over every split of budget into chunks."""
    import itertools

    tables = sorted(curves)
    hulls = {t: upper_hull(list(curves[t]) + [(0, 0)]) for t in tables}
    steps = budget // chunk
    best = None
    for split in itertools.product(range(steps + 1), repeat=len(tables)):
        if sum(split) != steps:
            continue
        total = sum(weights[t] * interpolate(hulls[t], k * chunk) for t, k in zip(tables, split))
        if best is None or total > best:
            best = total
    return best
