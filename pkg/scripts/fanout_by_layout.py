"""Average eval-query fanout of every layout algorithm on a planted workload.

    python scripts/fanout_by_layout.py --queries 60000 --train 40000
"""
import argparse
import time
from dataclasses import dataclass

from embstore.layout import (identity_layout, kmeans_layout, random_layout, recursive_kmeans_layout, shp_layout,
                             trace_fanout)
from embstore.workload import WorkloadSpec, generate_workload


@dataclass
class Settings:
    n: int = 32768
    group_size: int = 32
    query_len: int = 8
    queries: int = 60_000
    train: int = 40_000
    noise: float = 0.0
    B: int = 32
    seed: int = 1


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name, default in vars(Settings()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", type=type(default), default=default)
    s = Settings(**vars(ap.parse_args()))
    spec = WorkloadSpec(n=s.n, groups=s.n // s.group_size, group_size=s.group_size, noise=s.noise,
                        query_len=(s.query_len,) * 3, num_queries=s.queries)
    trace, emb = generate_workload(spec, s.seed)
    train, ev = trace.slice(0, s.train), trace.slice(s.train, s.queries)
    builders = {
        "identity": lambda: identity_layout(s.n, s.B),
        "random": lambda: random_layout(s.n, s.B, s.seed),
        "kmeans(k=n/B)": lambda: kmeans_layout(emb[0], s.n // s.B, s.B, seed=s.seed),
        "recursive_kmeans(256,32)": lambda: recursive_kmeans_layout(emb[0], 256, 32, s.B, seed=s.seed),
        "shp(16 iters)": lambda: shp_layout(train, s.n, s.B, 16, s.seed),
    }
    print(f"{'layout':<26}{'fanout':>8}{'seconds':>9}")
    for name, build in builders.items():
        t0 = time.perf_counter()
        lay = build()
        print(f"{name:<26}{trace_fanout(lay, ev):>8.3f}{time.perf_counter() - t0:>9.1f}")


if __name__ == "__main__":
    main()
