"""Experiment driver behind the CLI subcommands.

Every run writes under ``<output>/<config digest>/`` and drops a
``manifest.json`` naming the digest, seeds, code version and files written.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import hit_rate_curve, stack_distances
from .cache import (CacheConfig, FreqThreshold, NoPrefetch, effective_bandwidth_increase, policy_label,
                    simulate_lookups)
from .config import ExperimentConfig
from .layout import (Layout, identity_layout, kmeans_layout, random_layout, recursive_kmeans_layout,
                     shp_layout, trace_fanout, training_access_counts)
from .tuner import allocate, curve_from_reports, select_threshold
from .workload import (EmbeddingMatrix, Trace, access_histogram, compulsory_miss_rate, generate_workload,
                       load_embeddings, load_trace, split)

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


@dataclass
class Run:
    cfg: ExperimentConfig
    outdir: Path
    jobs: int = 1
    written: list[str] = field(default_factory=list)
    _trace: Trace | None = None
    _emb: dict[int, EmbeddingMatrix] | None = None
    _split: tuple[Trace, Trace] | None = None
    _layouts: dict = field(default_factory=dict)
    _full: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ExperimentConfig, output: str | None = None, jobs: int = 1) -> "Run":
        outdir = Path(output or cfg.output) / cfg.digest()
        outdir.mkdir(parents=True, exist_ok=True)
        return cls(cfg, outdir, jobs)

    # -- inputs ---------------------------------------------------------------

    @property
    def trace(self) -> Trace:
        if self._trace is None:
            src = self.cfg.trace
            if src.synthetic is not None:
                self._trace, self._emb = generate_workload(src.synthetic, src.seed)
            else:
                self._trace = load_trace(src.path)
                self._emb = {t: load_embeddings(p) for t, p in src.embeddings.items()}
        return self._trace

    @property
    def tables(self) -> list[int]:
        return list(self.trace.tables)

    @property
    def train_eval(self) -> tuple[Trace, Trace]:
        if self._split is None:
            self._split = split(self.trace, self.cfg.split)
        return self._split

    def layout_for(self, table: int, B: int | None = None, train: Trace | None = None,
                   tag: str = "") -> Layout:
        B = B or self.cfg.B
        key = (table, B, tag)
        if key not in self._layouts:
            lc = self.cfg.layout
            train = train if train is not None else self.train_eval[0]
            n = self.trace.tables[table]
            if lc.algorithm == "identity":
                lay = identity_layout(n, B)
            elif lc.algorithm == "random":
                lay = random_layout(n, B, lc.seed)
            elif lc.algorithm in ("kmeans", "recursive_kmeans"):
                self.trace
                if table not in (self._emb or {}):
                    raise ValueError(f"layout {lc.algorithm} needs embeddings for table {table}")
                emb = self._emb[table]
                if lc.algorithm == "kmeans":
                    lay = kmeans_layout(emb, min(lc.k, n), B, lc.kmeans_iters, lc.seed)
                else:
                    lay = recursive_kmeans_layout(emb, min(lc.k1, n), lc.k2, B, lc.kmeans_iters, lc.seed)
            else:
                lay = shp_layout(train.restrict(table), n, B, lc.iters, lc.seed)
            self._layouts[key] = lay
        return self._layouts[key]

    def counts_for(self, table: int, train: Trace | None = None) -> np.ndarray:
        train = train if train is not None else self.train_eval[0]
        return training_access_counts(train, table, self.trace.tables[table])

    # -- output ---------------------------------------------------------------

    def write(self, name: str, text: str) -> None:
        path = self.outdir / name
        fd, tmp = tempfile.mkstemp(dir=self.outdir, prefix=".tmp-")
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
        if name not in self.written:
            self.written.append(name)

    def write_csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.write(name, buf.getvalue())

    def meta(self) -> dict:
        return {"config_hash": self.cfg.digest(), "seeds": self.cfg.seeds(), "version": __version__}

    def write_json(self, name: str, payload) -> None:
        self.write(name, json.dumps({"meta": self.meta(), "data": payload}, sort_keys=True, indent=2) + "\n")

    def finish(self) -> Path:
        manifest = {**self.meta(), "config": self.cfg.canonical(), "files": sorted(self.written)}
        self.write("manifest.json", json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n")
        return self.outdir

    # -- simulation helpers ---------------------------------------------------

    def full_metrics(self, table: int, layout: Layout, capacity: int, policy, vector_size: int | None = None,
                     key_extra=()):
        vs = vector_size or self.cfg.cache.vector_size_bytes
        key = (table, id(layout), capacity, policy_label(policy), vs, key_extra)
        if key not in self._full:
            lk = self.train_eval[1].lookups(table)
            cfg = CacheConfig(capacity, policy, self.cfg.cache.block_size_bytes, vs)
            self._full[key] = simulate_lookups(lk, layout, cfg)
        return self._full[key]

    def map(self, fn, items):
        if self.jobs <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.jobs) as ex:
            return list(ex.map(fn, items))


# -- subcommands ----------------------------------------------------------------

def run_characterize(run: Run) -> None:
    trace = run.trace
    total = trace.num_lookups
    rows = []
    for t in run.tables:
        r = trace.restrict(t)
        lk = r.ids
        rows.append([t, trace.tables[t], len(lk),
                     _fmt(len(lk) / r.num_queries if r.num_queries else 0.0),
                     _fmt(100.0 * len(lk) / total if total else 0.0),
                     _fmt(100.0 * compulsory_miss_rate(trace, t)) if len(lk) else ""])
        if len(lk):
            sd = stack_distances(lk)
            n = trace.tables[t]
            sizes = sorted(set(np.unique(np.geomspace(1, n, num=min(n, 64)).astype(np.int64)).tolist()))
            curve = hit_rate_curve(sd, sizes)
            run.write_csv(f"hrc_table{t}.csv", ["size", "hit_rate"], [[s, _fmt(h)] for s, h in curve.points])
        hist = access_histogram(trace, t)
        run.write_csv(f"hist_table{t}.csv", ["bucket_lo", "bucket_hi", "count"], [list(b) for b in hist.buckets])
    run.write_csv("characterization.csv",
                  ["table", "vectors", "lookups", "avg_request_size", "pct_of_lookups", "compulsory_miss_pct"], rows)


def run_layout(run: Run) -> None:
    train, ev = run.train_eval
    rows = []
    for t in run.tables:
        lay = run.layout_for(t)
        run.write_csv(f"layout_table{t}.csv", ["vector_id", "block_id", "slot"],
                      [[v, int(lay.block_of[v]), int(lay.slot_of[v])] for v in range(lay.n)])
        run.write_json(f"layout_table{t}.json", {"n": lay.n, "B": lay.B, "num_blocks": lay.num_blocks,
                                                  "algorithm": lay.algorithm, "seed": lay.seed})
        counts = run.counts_for(t)
        run.write_csv(f"counts_table{t}.csv", ["vector_id", "count"], [[v, int(c)] for v, c in enumerate(counts)])
        evt = ev.restrict(t)
        if evt.num_queries:
            rows.append([t, lay.algorithm, lay.B, lay.num_blocks, _fmt(trace_fanout(lay, evt)),
                         _fmt(trace_fanout(identity_layout(lay.n, lay.B), evt))])
    run.write_csv("fanout.csv", ["table", "algorithm", "B", "num_blocks", "eval_fanout", "identity_fanout"], rows)


def run_simulate(run: Run) -> None:
    cfg = run.cfg
    jobs = []
    for t in run.tables:
        lay = run.layout_for(t)
        counts = run.counts_for(t)
        for cap in cfg.cache.capacities:
            for spec in cfg.cache.policies:
                for pol in spec.expand(counts):
                    jobs.append((t, lay, cap, pol))

    def one(job):
        t, lay, cap, pol = job
        m = run.full_metrics(t, lay, cap, pol)
        base = run.full_metrics(t, lay, cap, NoPrefetch())
        return job, m, base

    rows, metrics = [], []
    for (t, lay, cap, pol), m, base in run.map(one, jobs):
        name, param = policy_label(pol)
        ebi = effective_bandwidth_increase(m, base)
        rows.append([t, cap, name, param, m.block_reads, m.demand_hits, _fmt(ebi), _fmt(m.eb_fraction)])
        metrics.append({"table": t, "capacity": cap, "policy": name, "param": param, **asdict(m)})
    run.write_csv("sweep_cache_size.csv",
                  ["table", "capacity", "policy", "param", "block_reads", "hits", "ebi_percent", "eb_fraction"], rows)
    run.write_json("metrics.json", metrics)


def run_tune(run: Run) -> dict[int, list]:
    cfg = run.cfg
    curves, reports, rows = {}, {}, []
    for t in run.tables:
        if run.train_eval[1].restrict(t).num_queries == 0:
            continue
        lay, counts = run.layout_for(t), run.counts_for(t)
        per_size = [select_threshold(run.train_eval[1], lay, counts, s, cfg.tuner.candidates,
                                     cfg.tuner.sampling, t, cfg.cache.vector_size_bytes,
                                     cfg.cache.block_size_bytes) for s in cfg.tuner.sizes]
        pts = curve_from_reports(per_size)
        curves[t] = pts
        reports[str(t)] = [r.to_dict() for r in per_size]
        rows.extend([t, p.size, p.best_t, _fmt(p.ebi_percent), _fmt(p.hit_rate)] for p in pts)
    run.write_csv("gain_curves.csv", ["table", "size", "best_t", "ebi_percent", "hit_rate"], rows)
    run.write_json("thresholds.json", reports)
    return curves


def run_allocate(run: Run, curves: dict[int, list] | None = None) -> None:
    cfg = run.cfg
    if curves is None:
        curves = run_tune(run)
    ev = run.train_eval[1]
    weights = {t: int(len(ev.lookups(t))) for t in curves}
    hrc = {t: [(p.size, p.hit_rate) for p in pts] for t, pts in curves.items()}
    budget = cfg.allocation.budget
    alloc = allocate(hrc, weights, budget, cfg.allocation.chunk)
    run.write_json("allocation.json", {"budget": alloc.budget, "chunk": alloc.chunk,
                                       "sizes": {str(k): v for k, v in alloc.sizes.items()},
                                       "lookup_weights": {str(k): v for k, v in weights.items()}})


def run_sampling_sweep(run: Run) -> None:
    cfg = run.cfg
    rows = []
    for t in run.tables:
        if run.train_eval[1].restrict(t).num_queries == 0:
            continue
        lay, counts = run.layout_for(t), run.counts_for(t)
        for s in cfg.tuner.sizes:
            base = run.full_metrics(t, lay, s, NoPrefetch())
            full = {c: effective_bandwidth_increase(run.full_metrics(t, lay, s, FreqThreshold(c, counts)), base)
                    for c in cfg.tuner.candidates}
            best = max(full.values())
            for rate in cfg.tuner.rates:
                sampling = replace(cfg.tuner.sampling, rate=rate)
                r = select_threshold(run.train_eval[1], lay, counts, s, cfg.tuner.candidates, sampling, t)
                rows.append([t, s, rate, r.chosen, _fmt(r.result(r.chosen).ebi_percent), _fmt(full[r.chosen]),
                             _fmt(best)])
    run.write_csv("sweep_sampling.csv",
                  ["table", "size", "rate", "chosen_t", "mini_ebi_percent", "full_ebi_percent",
                   "oracle_ebi_percent"], rows)


def run_training_sweep(run: Run) -> None:
    cfg = run.cfg
    train, ev = run.train_eval
    rows = []
    for t in run.tables:
        tr_t = train.restrict(t)
        cum = np.cumsum(tr_t.query_lengths())
        for target in cfg.sweeps.training_lookups:
            q = int(np.searchsorted(cum, target, side="left")) + 1
            q = min(q, tr_t.num_queries)
            prefix = tr_t.slice(0, q)
            lay = run.layout_for(t, train=prefix, tag=f"train{target}")
            counts = training_access_counts(prefix, t, run.trace.tables[t])
            evt = ev.restrict(t)
            if evt.num_queries == 0:
                continue
            fan = trace_fanout(lay, evt)
            for s in cfg.tuner.sizes:
                r = select_threshold(ev, lay, counts, s, cfg.tuner.candidates, cfg.tuner.sampling, t)
                base = run.full_metrics(t, lay, s, NoPrefetch())
                m = run.full_metrics(t, lay, s, FreqThreshold(r.chosen, counts), key_extra=("train", target))
                rows.append([t, int(cum[q - 1]), s, _fmt(fan), r.chosen, _fmt(effective_bandwidth_increase(m, base))])
    run.write_csv("sweep_training.csv",
                  ["table", "train_lookups", "size", "eval_fanout", "chosen_t", "ebi_percent"], rows)


def run_vector_sweep(run: Run) -> None:
    cfg = run.cfg
    ev = run.train_eval[1]
    ref_vs = cfg.cache.vector_size_bytes
    rows = []
    for t in run.tables:
        if ev.restrict(t).num_queries == 0:
            continue
        counts = run.counts_for(t)
        for vs in cfg.sweeps.vector_sizes:
            B = cfg.cache.block_size_bytes // vs
            lay = run.layout_for(t, B=B)
            for s in cfg.tuner.sizes:
                cap = s if cfg.sweeps.vector_budget == "vectors" else max(1, s * ref_vs // vs)
                r = select_threshold(ev, lay, counts, cap, cfg.tuner.candidates, cfg.tuner.sampling, t,
                                     vector_size_bytes=vs, block_size_bytes=cfg.cache.block_size_bytes)
                base = run.full_metrics(t, lay, cap, NoPrefetch(), vector_size=vs)
                m = run.full_metrics(t, lay, cap, FreqThreshold(r.chosen, counts), vector_size=vs)
                rows.append([t, vs, B, cap, r.chosen, _fmt(effective_bandwidth_increase(m, base)),
                             _fmt(m.eb_fraction)])
    run.write_csv("sweep_vector_size.csv",
                  ["table", "vector_size", "B", "capacity", "chosen_t", "ebi_percent", "eb_fraction"], rows)


def run_pipeline(run: Run) -> None:
    run_characterize(run)
    run_layout(run)
    run_simulate(run)
    curves = run_tune(run)
    if run.cfg.allocation.budget > 0:
        run_allocate(run, curves)
    run_sampling_sweep(run)
    if run.cfg.sweeps.training_lookups:
        run_training_sweep(run)
    if run.cfg.sweeps.vector_sizes:
        run_vector_sweep(run)
