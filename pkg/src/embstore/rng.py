"""Named random streams.

Every stream starts with a purpose tag. numpy's SeedSequence ignores trailing
zero words, so ``default_rng(s)`` and ``default_rng([s, 0])`` coincide; the
leading tag keeps streams of different purposes apart.
"""
import numpy as np

_TAGS = {"workload": 1, "interleave": 2, "random_layout": 3, "shp": 4, "kmeans": 5}


def stream(purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([_TAGS[purpose], *(int(k) for k in keys)])
