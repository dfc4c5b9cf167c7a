import json
from importlib import resources

import httpx
import numpy as np
import pytest

from tmeta.core import (
    DataError, EmbeddingCorpus, EmbeddingRecord, LabeledFeatureSet, MetaTaskTable, load_corpus,
    load_embeddings, load_feature_set, load_meta_task_table, parse_meta_task_table, read_labels,
    save_embeddings, save_feature_set, save_meta_task_table, write_labels, write_matrix,
)
from tmeta.embed_client import ENDPOINT_ENV, EndpointError, fetch_embeddings, resolve_endpoint

DATA = resources.files("tmeta") / "data"


def write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


# ---- embeddings ----

def test_single_record_round_trip(tmp_path):
    p = tmp_path / "e.jsonl"
    write_lines(p, [{"name": "A", "kind": "dataset", "vector": [1.0, 2.0, 3.0, 4.0]}])
    recs = load_embeddings(p)
    assert len(recs) == 1
    assert recs[0].name == "A" and recs[0].kind == "dataset"
    assert recs[0].vector.tolist() == [1.0, 2.0, 3.0, 4.0]


def test_dimension_mismatch_names_line(tmp_path):
    p = tmp_path / "e.jsonl"
    write_lines(p, [{"name": "A", "kind": "dataset", "vector": [0.0] * 4},
                    {"name": "B", "kind": "dataset", "vector": [0.0] * 5}])
    with pytest.raises(DataError, match="line 2"):
        load_embeddings(p)


def test_declared_dimension_enforced(tmp_path):
    p = tmp_path / "e.jsonl"
    write_lines(p, [{"name": "A", "kind": "metric", "vector": [0.0] * 4}])
    with pytest.raises(DataError, match="dimension"):
        load_embeddings(p, dim=768)


def test_save_load_random_records_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    recs = [EmbeddingRecord(f"n{i}", "dataset" if i % 2 else "metric", rng.normal(size=16) * 10.0 ** rng.integers(-8, 8))
            for i in range(20)]
    p = tmp_path / "e.jsonl"
    save_embeddings(recs, p)
    back = load_embeddings(p)
    assert [(r.name, r.kind) for r in back] == [(r.name, r.kind) for r in recs]
    for a, b in zip(recs, back):
        assert a.vector.tobytes() == b.vector.tobytes()


@pytest.mark.parametrize("bad", [
    {"name": "A", "kind": "model", "vector": [1.0]},
    {"name": "A", "kind": "dataset", "vector": [1.0, float("nan")]},
    {"name": "A", "kind": "dataset"},
    {"name": "A", "kind": "dataset", "vector": []},
])
def test_malformed_records_rejected(tmp_path, bad):
    p = tmp_path / "e.jsonl"
    p.write_text(json.dumps(bad) + "\n")
    with pytest.raises(DataError):
        load_embeddings(p)


def test_duplicate_name_within_kind_rejected():
    c = EmbeddingCorpus([EmbeddingRecord("A", "dataset", [1.0])])
    c.add(EmbeddingRecord("A", "metric", [1.0]))   # same name, other kind is fine
    with pytest.raises(DataError, match="duplicate"):
        c.add(EmbeddingRecord("A", "dataset", [2.0]))


def test_shipped_corpus_shape():
    c = load_corpus(DATA / "paper_embeddings.jsonl", dim=768)
    assert len(c.names("dataset")) == 11 and len(c.names("metric")) == 9
    for r in c:
        assert abs(np.linalg.norm(r.vector.astype(np.float64)) - 1.0) < 1e-5


def test_corpus_without_and_subset():
    c = EmbeddingCorpus([EmbeddingRecord(n, "dataset", [float(i)]) for i, n in enumerate("ABC")])
    assert ("dataset", "B") not in c.without("dataset", "B")
    assert c.subset("dataset", ["A"]).names("dataset") == ["A"]


# ---- feature sets ----

def test_feature_set_load(tmp_path):
    X = np.arange(8, dtype=np.float64).reshape(4, 2)
    write_matrix(tmp_path / "f", X)
    write_labels(tmp_path / "l", [0, 1, 1, 0], 2)
    fs = load_feature_set(tmp_path / "f", tmp_path / "l")
    assert (fs.n, fs.d, fs.n_classes) == (4, 2, 2)
    assert np.array_equal(fs.features, X)


def test_label_out_of_range(tmp_path):
    write_matrix(tmp_path / "f", np.zeros((3, 2)))
    write_labels(tmp_path / "l", [0, 7, 1], 3)
    with pytest.raises(DataError, match="out of range"):
        load_feature_set(tmp_path / "f", tmp_path / "l")


def test_probs_row_not_stochastic_names_row():
    P = np.array([[0.5, 0.5], [0.4, 0.4], [1.0, 0.0]])
    with pytest.raises(DataError, match="row 1"):
        LabeledFeatureSet(np.zeros((3, 2)), np.array([0, 1, 0]), 2, P)


@pytest.mark.parametrize("blob", [b"XXXX1", b"FMAT1\x02\x00\x00\x00", b"FMAT1" + b"\x02\x00\x00\x00" * 2 + b"\x00" * 12])
def test_corrupt_matrix_files(tmp_path, blob):
    (tmp_path / "f").write_bytes(blob)
    write_labels(tmp_path / "l", [0, 1], 2)
    with pytest.raises(DataError):
        load_feature_set(tmp_path / "f", tmp_path / "l")


def test_feature_set_round_trip_random(tmp_path):
    rng = np.random.default_rng(1)
    for trial in range(5):
        n, d, C, Cs = rng.integers(2, 30), rng.integers(1, 6), rng.integers(1, 5), rng.integers(2, 5)
        F = rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)
        y = rng.integers(0, C, n)
        P = rng.dirichlet(np.ones(Cs), n).astype(np.float32).astype(np.float64)
        fs = LabeledFeatureSet(F, y, int(C), P)
        paths = [tmp_path / f"{trial}.{ext}" for ext in ("f", "l", "p")]
        save_feature_set(fs, *paths)
        back = load_feature_set(*paths)
        assert np.array_equal(back.features, fs.features)
        assert np.array_equal(back.labels, fs.labels) and back.n_classes == fs.n_classes
        assert np.array_equal(back.source_probs, fs.source_probs)


def test_labels_little_endian_layout(tmp_path):
    write_labels(tmp_path / "l", [1, 2], 3)
    raw = (tmp_path / "l").read_bytes()
    assert raw == b"LBLS1" + bytes([2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0])
    assert read_labels(tmp_path / "l")[0].tolist() == [1, 2]


# ---- meta-task table ----

def test_paper_fixture_cell():
    t = load_meta_task_table(DATA / "paper_tau.csv")
    assert t.shape == (11, 9)
    assert t.cell("CIFAR10", "H-Score") == pytest.approx(0.970)


def test_tied_row_order_is_list_order():
    t = MetaTaskTable(["A", "B"], ["x", "y"], [[0.5, 0.5], [0.1, 0.9]])
    assert t.ground_truth_order("A") == [0, 1]
    assert t.ground_truth_order("B") == [1, 0]


def test_missing_cell_rejected():
    text = "dataset,metric,tau_w\nA,x,0.1\nA,y,0.2\nB,x,0.3\n"
    with pytest.raises(DataError, match="missing cell"):
        parse_meta_task_table(text)


@pytest.mark.parametrize("text", [
    "dataset,metric,tau\nA,x,0.1\n",
    "dataset,metric,tau_w\nA,x,1.5\n",
    "dataset,metric,tau_w\nA,x,abc\n",
    "dataset,metric,tau_w\nA,x,0.1\nA,x,0.2\n",
])
def test_bad_tables_rejected(text):
    with pytest.raises(DataError):
        parse_meta_task_table(text)


def test_metric_permutation_permutes_order():
    rng = np.random.default_rng(2)
    tau = rng.uniform(-1, 1, (5, 6))
    t = MetaTaskTable([f"d{i}" for i in range(5)], [f"m{i}" for i in range(6)], tau)
    perm = rng.permutation(6)
    tp = t.select(metrics=[t.metrics[i] for i in perm])
    for d in t.datasets:
        assert [tp.metrics[i] for i in tp.ground_truth_order(d)] == [t.metrics[i] for i in t.ground_truth_order(d)]


def test_table_round_trip_bytes(tmp_path):
    rng = np.random.default_rng(3)
    t = MetaTaskTable(["a", "b", "c"], ["x", "y"], rng.uniform(-1, 1, (3, 2)))
    save_meta_task_table(t, tmp_path / "t.csv")
    back = load_meta_task_table(tmp_path / "t.csv")
    assert back.datasets == t.datasets and back.metrics == t.metrics
    assert back.tau.tobytes() == t.tau.tobytes()
    assert b"\r" not in (tmp_path / "t.csv").read_bytes()


# ---- embedding endpoint ----

def stub_transport(vectors, calls=None, status=200):
    def handler(request):
        body = json.loads(request.content)
        if calls is not None:
            calls.append(body["texts"])
        if status != 200:
            return httpx.Response(status)
        return httpx.Response(200, json={"vectors": [vectors[t] for t in body["texts"]]})
    return httpx.MockTransport(handler)


def test_stub_endpoint_pass_through():
    vecs = {"first": [0.25, -1.5, 3.0], "second": [1.0, 2.0, 0.125]}
    recs = fetch_embeddings([("A", "dataset", "first"), ("m", "metric", "second")], "http://stub/",
                            transport=stub_transport(vecs))
    assert [(r.name, r.kind) for r in recs] == [("A", "dataset"), ("m", "metric")]
    assert recs[0].vector.tolist() == vecs["first"] and recs[1].vector.tolist() == vecs["second"]


def test_batches_keep_input_order():
    texts = [(f"d{i}", "dataset", f"text {i}") for i in range(37)]
    vecs = {t: [float(i), 0.0] for i, (_, _, t) in enumerate(texts)}
    calls = []
    recs = fetch_embeddings(texts, "http://stub/", batch_size=5, max_inflight=3,
                            transport=stub_transport(vecs, calls))
    assert len(calls) == 8
    assert [r.vector[0] for r in recs] == list(range(37))


def test_empty_description_rejected_before_request():
    calls = []
    with pytest.raises(DataError, match="empty description"):
        fetch_embeddings([("A", "dataset", "ok"), ("B", "dataset", "  ")], "http://stub/",
                         transport=stub_transport({}, calls))
    assert calls == []


def test_server_error_after_retries():
    calls = []
    with pytest.raises(EndpointError):
        fetch_embeddings([("A", "dataset", "x")], "http://stub/", retries=2, backoff=0.0,
                         transport=stub_transport({}, calls, status=500))
    assert len(calls) == 3


def test_wrong_dimension_from_endpoint():
    with pytest.raises(EndpointError, match="shape"):
        fetch_embeddings([("A", "dataset", "x")], "http://stub/", dim=4,
                         transport=stub_transport({"x": [1.0, 2.0]}))


def test_endpoint_env_fallback(monkeypatch):
    monkeypatch.setenv(ENDPOINT_ENV, "http://env/")
    assert resolve_endpoint(None) == "http://env/"
    assert resolve_endpoint("http://flag/") == "http://flag/"
    monkeypatch.delenv(ENDPOINT_ENV)
    assert resolve_endpoint(None) is None


def test_real_http_endpoint(http_endpoint, tmp_path):
    texts = [("A", "dataset", "abc"), ("B", "dataset", "hello"), ("m", "metric", "x")]
    recs = fetch_embeddings(texts, http_endpoint, dim=3, batch_size=2)
    assert [r.vector.tolist() for r in recs] == [[3.0, 1.0, -1.0], [5.0, 1.0, -1.0], [1.0, 1.0, -1.0]]
    save_embeddings(recs, tmp_path / "c.jsonl")
    stored = load_embeddings(tmp_path / "c.jsonl")
    assert all(a.vector.tobytes() == b.vector.tobytes() for a, b in zip(recs, stored))
