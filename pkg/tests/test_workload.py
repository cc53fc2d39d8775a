import json

import numpy as np
import pytest
from hypothesis import given, settings

from embstore.workload import (Query, Trace, TraceFormatError, TraceValidationError, WorkloadSpec,
                               access_histogram, compulsory_miss_rate, generate_workload, group_members,
                               load_embeddings, load_trace, split, write_embeddings, write_trace,
                               zipf_weights)

from conftest import traces


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_load_trace_example(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_lines(p, [{"header": True, "table": 0, "n": 8}, {"table": 0, "ids": [1, 2]}, {"table": 0, "ids": [2]}])
    tr = load_trace(p)
    assert tr.num_queries == 2 and tr.num_lookups == 3
    assert list(tr.queries) == [Query(0, (1, 2)), Query(0, (2,))]


def test_load_trace_empty_body(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_lines(p, [{"header": True, "table": 0, "n": 8}])
    assert load_trace(p).num_queries == 0


def test_load_trace_id_out_of_range(tmp_path):
    p = tmp_path / "t.jsonl"
    _write_lines(p, [{"header": True, "table": 0, "n": 8}, {"table": 0, "ids": [9]}])
    with pytest.raises(TraceValidationError, match=":2:"):
        load_trace(p)


def test_load_trace_malformed_line_names_line(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"header": true, "table": 0, "n": 8}\n{"table": 0, "ids": [1]}\n{oops\n')
    with pytest.raises(TraceFormatError, match=":3:"):
        load_trace(p)


@settings(max_examples=50, deadline=None)
@given(traces(tables=3))
def test_trace_round_trip(tmp_path_factory, tr):
    p = tmp_path_factory.mktemp("rt") / "t.jsonl"
    write_trace(tr, p)
    assert load_trace(p) == tr


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    from embstore.workload import EmbeddingMatrix
    emb = EmbeddingMatrix(rng.standard_normal((7, 3)).astype(np.float32))
    write_embeddings(emb, tmp_path / "e.f32")
    header = json.loads((tmp_path / "e.f32.json").read_text())
    assert header == {"n": 7, "d": 3, "dtype": "f32", "order": "row-major"}
    assert (tmp_path / "e.f32").stat().st_size == 7 * 3 * 4
    assert np.array_equal(load_embeddings(tmp_path / "e.f32").values, emb.values)


def test_planted_queries_stay_in_one_group():
    spec = WorkloadSpec(n=4096, groups=128, group_size=32, query_len=(8, 8, 8), num_queries=2000)
    trace, _ = generate_workload(spec, seed=4)
    groups = group_members(spec, 4)
    group_of = np.full(spec.n, -1)
    for g, row in enumerate(groups):
        group_of[row] = g
    for q in trace.table_queries(0):
        assert len(q) == 8
        assert len(set(group_of[q].tolist())) == 1
        assert len(set(q.tolist())) == 8


def test_uniform_group_draws_chi_square():
    # zipf_alpha=0: per-group query counts vs a uniform multinomial
    spec = WorkloadSpec(n=2048, groups=64, group_size=32, query_len=(1, 1, 1), num_queries=100_000)
    trace, _ = generate_workload(spec, seed=11)
    groups = group_members(spec, 11)
    group_of = np.full(spec.n, -1)
    for g, row in enumerate(groups):
        group_of[row] = g
    counts = np.bincount(group_of[trace.ids], minlength=spec.groups)
    expected = spec.num_queries / spec.groups
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    dof = spec.groups - 1
    assert abs(chi2 - dof) <= 3 * np.sqrt(2 * dof)


def test_zipf_weights_shape():
    w = zipf_weights(5, 1.0)
    assert np.isclose(w.sum(), 1.0)
    assert np.allclose(w[0] / w, np.arange(1, 6))
    assert np.allclose(zipf_weights(4, 0.0), 0.25)


def test_generation_is_deterministic():
    spec = WorkloadSpec(tables=2, n=512, groups=32, group_size=8, zipf_alpha=1.0, noise=0.1,
                        query_len=(4, 1, 12), num_queries=500)
    a, ea = generate_workload(spec, 3)
    b, eb = generate_workload(spec, 3)
    assert a == b
    assert all(np.array_equal(ea[t].values, eb[t].values) for t in ea)
    c, _ = generate_workload(spec, 4)
    assert not a == c


def test_embeddings_cluster_by_group():
    spec = WorkloadSpec(n=1024, d=8, groups=32, group_size=32, num_queries=10)
    _, emb = generate_workload(spec, 0)
    groups = group_members(spec, 0)
    x = emb[0].values.astype(np.float64)
    within = np.mean([np.linalg.norm(x[g] - x[g].mean(0), axis=1).mean() for g in groups])
    cents = np.stack([x[g].mean(0) for g in groups])
    between = np.linalg.norm(cents[:, None] - cents[None], axis=2)[np.triu_indices(32, 1)].min()
    assert within < 0.25 * between


def test_split_examples():
    tr = Trace.from_queries([Query(0, (i,)) for i in range(10)], {0: 10})
    a, b = split(tr, 0.8)
    assert (a.num_queries, b.num_queries) == (8, 2)
    assert np.array_equal(np.concatenate([a.ids, b.ids]), tr.ids)
    one = Trace.from_queries([Query(0, (0,))], {0: 1})
    a, b = split(one, 0.5)
    assert (a.num_queries, b.num_queries) == (1, 0)
    with pytest.raises(ValueError):
        split(tr, 1.0)


def test_histogram_examples():
    tr = Trace.from_queries([Query(0, (0, 0, 1)), Query(0, (0,))], {0: 4})
    h = access_histogram(tr, 0)
    assert h.as_dict() == {(0, 0): 2, (1, 9): 2}
    assert access_histogram(Trace.empty({0: 5}), 0).as_dict() == {(0, 0): 5}
    with pytest.raises(ValueError):
        access_histogram(tr, 3)


@settings(max_examples=50, deadline=None)
@given(traces(tables=2))
def test_histogram_conserves_vectors(tr):
    for t, n in tr.tables.items():
        assert sum(c for _, _, c in access_histogram(tr, t).buckets) == n


def test_compulsory_miss_rate_examples():
    tr = Trace.from_queries([Query(0, (0, 1)), Query(0, (0, 2))], {0: 3})
    assert compulsory_miss_rate(tr, 0) == 0.75
    assert compulsory_miss_rate(Trace.from_queries([Query(0, (0, 1, 2))], {0: 3}), 0) == 1.0
    with pytest.raises(ValueError):
        compulsory_miss_rate(Trace.empty({0: 3}), 0)


@settings(max_examples=50, deadline=None)
@given(traces())
def test_compulsory_rate_bounds(tr):
    r = compulsory_miss_rate(tr, 0)
    assert 0 < r <= 1
    assert (r == 1) == (len(set(tr.ids.tolist())) == tr.num_lookups)


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(n=10, groups=4, group_size=4)
