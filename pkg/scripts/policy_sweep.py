"""Effective-bandwidth increase of each caching policy across cache sizes.

Uses an SHP layout trained on the first half of a skewed planted trace and
replays the second half.

    python scripts/policy_sweep.py --scale 1
"""
import argparse
from dataclasses import dataclass

from embstore.cache import (CacheConfig, FreqThreshold, InsertAt, NoPrefetch, PrefetchAll, ShadowAdmit,
                            ShadowCombined, effective_bandwidth_increase, policy_label, simulate_lookups)
from embstore.layout import shp_layout, training_access_counts
from embstore.workload import WorkloadSpec, generate_workload, split


@dataclass
class Settings:
    scale: int = 1
    group_size: int = 4
    zipf_alpha: float = 1.2
    noise: float = 0.1
    seed: int = 7


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name, default in vars(Settings()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", type=type(default), default=default)
    s = Settings(**vars(ap.parse_args()))
    n = 32768 * s.scale
    spec = WorkloadSpec(n=n, groups=n // s.group_size, group_size=s.group_size, zipf_alpha=s.zipf_alpha,
                        noise=s.noise, query_len=(4, 2, 64), num_queries=500_000 * s.scale)
    trace, _ = generate_workload(spec, s.seed)
    train, ev = split(trace, 0.5)
    lay = shp_layout(train, n, 32, 16, 0)
    counts = training_access_counts(train, 0, n)
    lk = ev.lookups(0)
    policies = [PrefetchAll(), InsertAt(0.5), InsertAt(0.9), ShadowAdmit(2.0), ShadowCombined(0.5, 2.0)]
    policies += [FreqThreshold(t, counts) for t in (0, 5, 10, 20, 50)]
    sizes = [n // 40, n // 20, n // 10, n // 5, 2 * n // 5]
    print("policy".ljust(28) + "".join(f"{sz:>10}" for sz in sizes))
    base = {sz: simulate_lookups(lk, lay, CacheConfig(sz, NoPrefetch())) for sz in sizes}
    print("NoPrefetch hit rate".ljust(28) + "".join(f"{base[sz].hit_rate:>10.3f}" for sz in sizes))
    for pol in policies:
        name = " ".join(x for x in policy_label(pol) if x)
        row = [effective_bandwidth_increase(simulate_lookups(lk, lay, CacheConfig(sz, pol)), base[sz])
               for sz in sizes]
        print(name.ljust(28) + "".join(f"{v:>9.1f}%" for v in row))


if __name__ == "__main__":
    main()
