"""Chosen admission threshold and bandwidth gain per cache size, full cache vs
miniature caches at several sampling rates and seeds.

Defaults reproduce the pinned skewed workload of the acceptance suite
(about 3 minutes on one core):

    python scripts/threshold_table.py --seeds 0 1 2 3 4
"""
import argparse
from dataclasses import dataclass, field

from embstore.cache import CacheConfig, FreqThreshold, effective_bandwidth_increase, simulate_lookups
from embstore.layout import shp_layout, trace_fanout, training_access_counts
from embstore.tuner import DEFAULT_CANDIDATES, SamplingSpec, select_threshold
from embstore.workload import WorkloadSpec, generate_workload, split


@dataclass
class Settings:
    scale: int = 4
    group_size: int = 4
    zipf_alpha: float = 1.2
    noise: float = 0.1
    seed: int = 7
    unit: str = "block"
    rates: list = field(default_factory=lambda: [0.1, 0.01])
    seeds: list = field(default_factory=lambda: [0])
    fractions: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    d = Settings()
    ap.add_argument("--scale", type=int, default=d.scale)
    ap.add_argument("--group-size", type=int, default=d.group_size)
    ap.add_argument("--zipf-alpha", type=float, default=d.zipf_alpha)
    ap.add_argument("--noise", type=float, default=d.noise)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--unit", choices=["block", "id"], default=d.unit)
    ap.add_argument("--rates", type=float, nargs="+", default=d.rates)
    ap.add_argument("--seeds", type=int, nargs="+", default=d.seeds)
    ap.add_argument("--fractions", type=float, nargs="+", default=d.fractions)
    s = Settings(**vars(ap.parse_args()))

    n = 32768 * s.scale
    spec = WorkloadSpec(n=n, groups=n // s.group_size, group_size=s.group_size, zipf_alpha=s.zipf_alpha, noise=s.noise,
                        query_len=(4, 2, 64), num_queries=500_000 * s.scale)
    trace, _ = generate_workload(spec, s.seed)
    train, ev = split(trace, 0.5)
    lay = shp_layout(train, n, 32, 16, 0)
    counts = training_access_counts(train, 0, n)
    lk = ev.lookups(0)
    print(f"n={n} eval lookups={len(lk)} shp fanout={trace_fanout(lay, ev):.3f}")

    for frac in s.fractions:
        size = int(frac * n)
        base = simulate_lookups(lk, lay, CacheConfig(size))
        full = {t: effective_bandwidth_increase(simulate_lookups(lk, lay, CacheConfig(size, FreqThreshold(t, counts))),
                                                base)
                for t in DEFAULT_CANDIDATES}
        best_t = max(full, key=lambda t: (full[t], t))
        print(f"\nsize {size} (baseline hit rate {base.hit_rate:.3f})")
        print("  full sweep: " + "  ".join(f"t={t}:{e:+.1f}%" for t, e in full.items()))
        print(f"  best t={best_t} gain {full[best_t]:+.1f}%")
        for rate in s.rates:
            picks = []
            for sd in s.seeds:
                rep = select_threshold(ev, lay, counts, size, DEFAULT_CANDIDATES, SamplingSpec(rate, sd, s.unit))
                gap = (full[best_t] - full[rep.chosen]) / abs(full[best_t])
                picks.append(f"t={rep.chosen} ({100 * gap:.0f}% off)")
            print(f"  rate 1/{round(1 / rate)}: " + ", ".join(picks))


if __name__ == "__main__":
    main()
