"""Declarative experiment configuration (YAML or JSON on disk)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .cache import CachePolicy, FreqThreshold, InsertAt, NoPrefetch, PrefetchAll, ShadowAdmit, ShadowCombined
from .tuner import DEFAULT_CANDIDATES, SamplingSpec
from .workload import WorkloadSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TraceSource:
    path: str | None = None
    embeddings: dict[int, str] = field(default_factory=dict)  # table -> raw f32 file
    synthetic: WorkloadSpec | None = None
    seed: int = 0


@dataclass(frozen=True)
class LayoutConfig:
    algorithm: str = "shp"  # identity | random | kmeans | recursive_kmeans | shp
    iters: int = 16
    k: int = 256
    k1: int = 256
    k2: int = 32
    kmeans_iters: int = 20
    seed: int = 0


@dataclass(frozen=True)
class PolicySpec:
    """One policy family with lists of parameter values (a grid)."""

    type: str
    p: tuple[float, ...] = ()
    multiplier: tuple[float, ...] = ()
    t: tuple[int, ...] = ()

    def expand(self, counts) -> list[CachePolicy]:
        if self.type == "NoPrefetch":
            return [NoPrefetch()]
        if self.type == "PrefetchAll":
            return [PrefetchAll()]
        if self.type == "InsertAt":
            return [InsertAt(p) for p in self.p]
        if self.type == "ShadowAdmit":
            return [ShadowAdmit(m) for m in self.multiplier]
        if self.type == "ShadowCombined":
            return [ShadowCombined(p, m) for p in self.p for m in self.multiplier]
        if self.type == "FreqThreshold":
            return [FreqThreshold(t, counts) for t in self.t]
        raise ConfigError(f"unknown policy type {self.type!r}")


@dataclass(frozen=True)
class CacheGrid:
    capacities: tuple[int, ...] = (1000,)
    policies: tuple[PolicySpec, ...] = (PolicySpec("NoPrefetch"), PolicySpec("PrefetchAll"))
    block_size_bytes: int = 4096
    vector_size_bytes: int = 128


@dataclass(frozen=True)
class TunerConfig:
    sizes: tuple[int, ...] = (1000,)
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    sampling: SamplingSpec = SamplingSpec(0.01, 0, "block")
    rates: tuple[float, ...] = (1.0, 0.1, 0.01)


@dataclass(frozen=True)
class AllocationConfig:
    budget: int = 0
    chunk: int = 1


@dataclass(frozen=True)
class SweepConfig:
    training_lookups: tuple[int, ...] = ()
    vector_sizes: tuple[int, ...] = (64, 128, 256)
    vector_budget: str = "vectors"  # "vectors": fixed vector count; "bytes": fixed byte budget


@dataclass(frozen=True)
class ExperimentConfig:
    trace: TraceSource
    split: float = 0.5
    layout: LayoutConfig = LayoutConfig()
    cache: CacheGrid = CacheGrid()
    tuner: TunerConfig = TunerConfig()
    allocation: AllocationConfig = AllocationConfig()
    sweeps: SweepConfig = SweepConfig()
    output: str = "out"

    @property
    def B(self) -> int:
        return self.cache.block_size_bytes // self.cache.vector_size_bytes

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("output")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def seeds(self) -> dict[str, int]:
        return {"trace": self.trace.seed, "layout": self.layout.seed,
                "sampling": self.tuner.sampling.seed}


def _tuple(v, cast=lambda x: x):
    if v is None:
        return ()
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return (cast(v),)


def _build(cls, raw: dict | None, **conv):
    raw = dict(raw or {})
    known = cls.__dataclass_fields__
    extra = set(raw) - set(known)
    if extra:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(extra)}")
    for k, f in conv.items():
        if k in raw:
            raw[k] = f(raw[k])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e


def parse_config(raw: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict) or "trace" not in raw:
        raise ConfigError("config needs a 'trace' section")
    tr = dict(raw["trace"])
    synth = tr.get("synthetic")
    if synth is not None:
        if "query_len" in synth:
            synth = {**synth, "query_len": tuple(synth["query_len"])}
        tr["synthetic"] = _build(WorkloadSpec, synth)
    if tr.get("path") and base_dir is not None and not Path(tr["path"]).is_absolute():
        tr["path"] = str(base_dir / tr["path"])
    if tr.get("embeddings"):
        emb = {int(k): str(base_dir / v) if base_dir and not Path(v).is_absolute() else v
               for k, v in tr["embeddings"].items()}
        tr["embeddings"] = emb
    source = _build(TraceSource, tr)
    if (source.path is None) == (source.synthetic is None):
        raise ConfigError("trace needs exactly one of 'path' or 'synthetic'")
    if source.path is not None and not Path(source.path).exists():
        raise ConfigError(f"trace file {source.path} does not exist")

    cache_raw = dict(raw.get("cache") or {})
    if "policies" in cache_raw:
        cache_raw["policies"] = tuple(
            _build(PolicySpec, p, p=lambda v: _tuple(v, float), multiplier=lambda v: _tuple(v, float),
                   t=lambda v: _tuple(v, int))
            for p in cache_raw["policies"])
    cache = _build(CacheGrid, cache_raw, capacities=lambda v: _tuple(v, int))
    tuner_raw = dict(raw.get("tuner") or {})
    if "sampling" in tuner_raw:
        tuner_raw["sampling"] = _build(SamplingSpec, tuner_raw["sampling"])
    tuner = _build(TunerConfig, tuner_raw, sizes=lambda v: _tuple(v, int),
                   candidates=lambda v: _tuple(v, int), rates=lambda v: _tuple(v, float))
    cfg = ExperimentConfig(
        trace=source,
        split=float(raw.get("split", 0.5)),
        layout=_build(LayoutConfig, raw.get("layout")),
        cache=cache,
        tuner=tuner,
        allocation=_build(AllocationConfig, raw.get("allocation")),
        sweeps=_build(SweepConfig, raw.get("sweeps"), training_lookups=lambda v: _tuple(v, int),
                      vector_sizes=lambda v: _tuple(v, int)),
        output=str(raw.get("output", "out")),
    )
    _check(cfg)
    return cfg


def _check(cfg: ExperimentConfig) -> None:
    if not 0.0 < cfg.split < 1.0:
        raise ConfigError("split must lie in (0, 1)")
    if not cfg.cache.capacities or not cfg.cache.policies:
        raise ConfigError("cache grid needs capacities and policies")
    if cfg.cache.block_size_bytes % cfg.cache.vector_size_bytes:
        raise ConfigError("vector size must divide block size")
    if not cfg.tuner.sizes or not cfg.tuner.candidates:
        raise ConfigError("tuner needs sizes and candidates")
    if list(cfg.tuner.sizes) != sorted(set(cfg.tuner.sizes)):
        raise ConfigError("tuner sizes must be strictly increasing")
    if cfg.layout.algorithm not in ("identity", "random", "kmeans", "recursive_kmeans", "shp"):
        raise ConfigError(f"unknown layout algorithm {cfg.layout.algorithm!r}")
    if cfg.allocation.chunk < 1 or cfg.allocation.budget % cfg.allocation.chunk:
        raise ConfigError("allocation budget must be a multiple of chunk")
    if cfg.sweeps.vector_budget not in ("vectors", "bytes"):
        raise ConfigError("sweeps.vector_budget must be 'vectors' or 'bytes'")
    for vs in cfg.sweeps.vector_sizes:
        if cfg.cache.block_size_bytes % vs:
            raise ConfigError(f"vector size {vs} does not divide the block size")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(raw, path.parent)
