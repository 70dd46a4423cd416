import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphgen import MULTI_SCHEMA, random_graph
from vulnkg import fusion as fz
from vulnkg import numcore as nc
from vulnkg.kgstore import KnowledgeGraph, augment_inverses


def weights(text_dim=12, dim=4, hidden=6, seed=0):
    return fz.FusionWeights.init(np.random.default_rng(seed), text_dim, dim, hidden)


# -- text embeddings ------------------------------------------------------------------

def test_undescribed_cpe_embeds_its_label(nvd_graph):
    g = nvd_graph
    e = g.entity_id("cpe:2.3:a:google:chrome", "CPE")
    assert g.description(e) == "cpe:2.3:a:google:chrome"
    prov = fz.LocalHashEmbedder()
    emb = fz.get_text_embedding(e, g, prov, fz.EmbeddingCache())
    assert np.array_equal(emb.vector, prov.embed(["cpe:2.3:a:google:chrome"])[0])
    assert emb.vector.shape == (fz.TEXT_DIM,) and emb.provider == "local-fallback"


def test_local_fallback_deterministic_and_normalized():
    p = fz.LocalHashEmbedder()
    a = p.embed(["Heap buffer overflow in libwebp"])[0]
    b = fz.LocalHashEmbedder().embed(["Heap buffer overflow in libwebp"])[0]
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


@given(st.text(min_size=1, max_size=60).filter(lambda s: s.strip()))
@settings(max_examples=60, deadline=None)
def test_local_fallback_norm_property(text):
    v = fz.LocalHashEmbedder(dim=64).embed([text])[0]
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9


def test_local_fallback_similar_texts_are_closer():
    p = fz.LocalHashEmbedder()
    a, b, c = p.embed(["sql injection in login form", "sql injection in search form", "kernel use after free"])
    assert a @ b > a @ c


def test_empty_text_rejected():
    with pytest.raises(fz.EmbeddingError):
        fz.LocalHashEmbedder().embed(["   "])


def test_cache_hit_returns_fetched_vector_and_avoids_calls():
    p = fz.LocalHashEmbedder(dim=32)
    cache = fz.EmbeddingCache(dim=32)
    first = fz.embed_texts(["alpha", "beta", "alpha"], p, cache)
    assert p.calls == 1 and len(cache) == 2
    again = fz.embed_texts(["beta", "alpha"], p, cache)
    assert p.calls == 1
    assert np.array_equal(again[1].vector, first[0].vector)


def test_cache_persistence_round_trip(tmp_path):
    p = fz.LocalHashEmbedder(dim=16)
    c = fz.EmbeddingCache(tmp_path / "e.tsv", dim=16)
    embs = fz.embed_texts(["one", "two"], p, c)
    c.save()
    d = fz.EmbeddingCache(tmp_path / "e.tsv", dim=16)
    assert len(d) == 2
    for e in embs:
        assert np.array_equal(d.get(e.key).vector, e.vector)
    with pytest.raises(fz.EmbeddingError):
        fz.EmbeddingCache(tmp_path / "e.tsv", dim=8)
    lines = (tmp_path / "e.tsv").read_text().splitlines()
    (tmp_path / "e.tsv").write_text("\n".join(lines[:-1] + [lines[-1].rsplit(" ", 3)[0]]) + "\n")
    with pytest.raises(fz.EmbeddingError):
        fz.EmbeddingCache(tmp_path / "e.tsv", dim=16)


class _Resp:
    def __init__(self, status, body, headers=None):
        self.status_code = status
        self.content = json.dumps(body).encode() if not isinstance(body, bytes) else body
        self.headers = headers or {}


class _Session:
    def __init__(self, dim, fail_first=0):
        self.dim = dim
        self.fail_first = fail_first
        self.posts = []

    def post(self, url, data=None, headers=None, timeout=None):
        body = json.loads(data)
        self.posts.append((url, body, headers))
        if self.fail_first:
            self.fail_first -= 1
            return _Resp(503, b"", {"Retry-After": "1"})
        n = len(body["input"])
        # reversed index order exercises the sort in the decoder
        return _Resp(200, {"data": [{"index": i, "embedding": [float(i)] * self.dim} for i in reversed(range(n))]})


def test_remote_batches_and_auth():
    s = _Session(dim=8)
    r = fz.RemoteEmbedder(url="http://embed", dim=8, batch_size=2, session=s, token="tok", sleep=lambda _: None)
    out = r.embed(["a", "b", "c"])
    assert out.shape == (3, 8) and out[:, 0].tolist() == [0.0, 1.0, 0.0]
    assert [len(b["input"]) for _, b, _ in s.posts] == [2, 1]
    assert s.posts[0][2]["Authorization"] == "Bearer tok"
    assert s.posts[0][1]["model"] == fz.DEFAULT_MODEL


def test_remote_token_from_environment(monkeypatch):
    monkeypatch.setenv(fz.TOKEN_ENV, "from-env")
    s = _Session(dim=4)
    fz.RemoteEmbedder(dim=4, session=s).embed(["x"])
    assert s.posts[0][2]["Authorization"] == "Bearer from-env"


def test_remote_retries_then_fails():
    sleeps = []
    ok = fz.RemoteEmbedder(dim=4, session=_Session(4, fail_first=2), sleep=sleeps.append, retries=3)
    ok.embed(["x"])
    assert sleeps == [1.0, 1.0] and ok.calls == 3
    bad = fz.RemoteEmbedder(dim=4, session=_Session(4, fail_first=10), sleep=lambda _: None, retries=2)
    with pytest.raises(fz.EmbeddingError):
        bad.embed(["x"])
    assert bad.calls == 3


def test_remote_rejects_wrong_dimension_and_batch_size():
    with pytest.raises(fz.EmbeddingError):
        fz.RemoteEmbedder(dim=6, session=_Session(4), sleep=lambda _: None).embed(["x"])
    with pytest.raises(ValueError):
        fz.RemoteEmbedder(batch_size=257)


class _Handler(BaseHTTPRequestHandler):
    requests_seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests_seen.append((self.headers.get("Authorization"), body))
        data = [{"index": i, "embedding": [len(t) / 10.0] * 8} for i, t in enumerate(body["input"])]
        payload = json.dumps({"data": data}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embedding_server():
    _Handler.requests_seen = []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1/embeddings", _Handler.requests_seen
    srv.shutdown()
    srv.server_close()


def test_remote_over_real_http_with_cache_coherence(embedding_server):
    url, seen = embedding_server
    g = random_graph(np.random.default_rng(0), 10, 20)
    prov = fz.RemoteEmbedder(url=url, dim=8, token="t")
    cache = fz.EmbeddingCache(dim=8)
    m = fz.entity_text_matrix(g, prov, cache)
    assert m.shape == (g.num_entities, 8)
    warm = prov.calls
    assert warm == 1 and seen[0][0] == "Bearer t"
    m2 = fz.entity_text_matrix(g, prov, cache)
    assert prov.calls == warm and np.array_equal(m, m2)


# -- relational feature -------------------------------------------------------------------

def _graph(triples, n=4):
    ents = [("A", f"a{i}") for i in range(n)]
    return KnowledgeGraph.from_triples(MULTI_SCHEMA, ents, [(h, r, t, "2022-01-01") for h, r, t in triples])


def test_relational_feature_examples():
    g = _graph([(0, "p0", 1), (1, "p5", 2)])
    rq = np.random.default_rng(0).normal(size=(g.num_relations, 3))
    assert np.allclose(fz.relational_feature(0, g, rq), rq[0], atol=0)
    assert not fz.relational_feature(3, g, rq).any()
    assert np.allclose(fz.relational_feature(1, g, rq), (rq[0] + rq[5]) / 2, atol=1e-15)


def test_incidence_rows_are_means():
    g = augment_inverses(random_graph(np.random.default_rng(3), 12, 30))
    m = fz.incidence_mean(g).toarray()
    deg = np.asarray(m.sum(axis=1)).ravel()
    assert np.allclose(deg[deg > 0], 1.0)
    for e in range(g.num_entities):
        incident = set(g.rels[(g.heads == e) | (g.tails == e)].tolist())
        assert set(np.flatnonzero(m[e]).tolist()) == incident


# -- fuse ----------------------------------------------------------------------------------

def test_fuse_default_dimensions():
    w = fz.FusionWeights.init(np.random.default_rng(0), fz.TEXT_DIM, 64, 800)
    assert w.first_layer().shape == (1600, 800)
    out = fz.fuse(np.ones(fz.TEXT_DIM), np.ones(64), w)
    assert out.shape == (64,)


def test_fuse_zero_weights():
    w = weights()
    for t in (w.W1_text, w.W1_rel, w.b1, w.W2, w.b2):
        t.data[...] = 0.0
    assert not fz.fuse(np.ones(12), np.ones(4), w).data.any()


def test_fuse_matches_concatenated_matrix_arithmetic():
    w = weights(seed=3)
    w.b1.data[...] = np.linspace(-0.5, 0.5, 6)
    w.b2.data[...] = np.linspace(0.1, 0.4, 4)
    rng = np.random.default_rng(4)
    text, rel = rng.normal(size=12), rng.normal(size=4)
    expect = np.maximum(np.concatenate([text, rel]) @ w.first_layer() + w.b1.data, 0) @ w.W2.data + w.b2.data
    assert np.allclose(fz.fuse(text, rel, w).data, expect, atol=1e-14)


def test_fuse_dimension_mismatch():
    with pytest.raises(ValueError):
        fz.fuse(np.ones(11), np.ones(4), weights())
    with pytest.raises(ValueError):
        fz.fuse(np.ones(12), np.ones(5), weights())


def test_fuse_grad_check():
    w = weights(seed=5)
    rng = np.random.default_rng(5)
    text, rel = rng.normal(size=(3, 12)), rng.normal(size=(3, 4))
    for name, p in w.named().items():
        err = nc.grad_check(lambda _x: nc.sum_all(nc.sigmoid(fz.fuse(text, rel, w))), p)
        assert err < 1e-6, name
    r = nc.Parameter(rel)
    assert nc.grad_check(lambda x: nc.sum_all(nc.sigmoid(fz.fuse(text, x, w))), r) < 1e-6


def test_fused_features_match_per_entity_fuse():
    g = augment_inverses(random_graph(np.random.default_rng(6), 8, 20))
    w = weights(seed=6)
    rng = np.random.default_rng(7)
    text = rng.normal(size=(g.num_entities, 12))
    n_r = g.num_relations
    rq = nc.Tensor(rng.normal(size=(2 * n_r, 4)))
    out = fz.fused_features(g, text, rq, [1, 0, 1], w).data
    n = g.num_entities
    for b, slot in enumerate([1, 0, 1]):
        block = rq.data[slot * n_r:(slot + 1) * n_r]
        for e in range(n):
            expect = fz.fuse(text[e], fz.relational_feature(e, g, block), w).data
            assert np.allclose(out[b * n + e], expect, atol=1e-13)
