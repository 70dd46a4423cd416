import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphgen import MULTI_SCHEMA, random_graph
from vulnkg import numcore as nc
from vulnkg.gnn import (FUNDAMENTAL, GROUPS, GraphContext, LinkPredictor, ModelConfig, ModelParams, Query,
                        RelationGraph, entity_gnn, indicator_e, indicator_r, lift_relation_graph, relation_gnn,
                        relation_transform_g, score_logits, score_tail)
from vulnkg.kgstore import KnowledgeGraph, augment_inverses


def brute_force_lift(g: KnowledgeGraph) -> set:
    """O(|T|^2) pair enumeration."""
    trip = list(zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist()))
    out = set()
    for h1, r1, t1 in trip:
        for h2, r2, t2 in trip:
            if h1 == h2:
                out.add((r1, "h2h", r2))
            if h1 == t2:
                out.add((r1, "h2t", r2))
            if t1 == h2:
                out.add((r1, "t2h", r2))
            if t1 == t2:
                out.add((r1, "t2t", r2))
    return out


def tiny(triples, n=3):
    ents = [("A", f"a{i}") for i in range(n)]
    return KnowledgeGraph.from_triples(MULTI_SCHEMA, ents, [(h, r, t, "2022-01-01") for h, r, t in triples])


def cfg(**kw):
    base = dict(dim=4, relation_layers=2, entity_layers=2, fusion=False)
    base.update(kw)
    return ModelConfig(**base)


# -- lift ------------------------------------------------------------------------------

def test_lift_examples():
    r1, r2 = 0, 5  # p0 and p5 are both A -> A
    e = lift_relation_graph(tiny([(0, "p0", 1), (1, "p5", 2)])).edge_set()
    assert (r1, "t2h", r2) in e and (r2, "h2t", r1) in e
    e = lift_relation_graph(tiny([(0, "p0", 1), (0, "p5", 2)])).edge_set()
    assert (r1, "h2h", r2) in e
    e = lift_relation_graph(tiny([(0, "p0", 1)])).edge_set()
    assert e == {(r1, "h2h", r1), (r1, "t2t", r1)}


def test_lift_matches_brute_force_on_fixture(nvd_graph):
    g = augment_inverses(nvd_graph)
    assert lift_relation_graph(g).edge_set() == brute_force_lift(g)


@given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_lift_property(seed, n_triples, n_rel):
    g = random_graph(np.random.default_rng(seed), 10, n_triples, n_rel)
    rg = lift_relation_graph(g)
    assert rg.edge_set() == brute_force_lift(g)
    assert rg.num_edges == len(rg.edge_set())
    assert rg.src.max(initial=0) < g.num_relations and rg.dst.max(initial=0) < g.num_relations


# -- indicators ------------------------------------------------------------------------

def test_indicator_r_examples():
    x = indicator_r(Query(0, 0), 2, 4).data
    assert x.tolist() == [[1, 1, 1, 1], [0, 0, 0, 0]]
    y = indicator_r(Query(5, 3), 7, 6).data
    assert (np.abs(y).sum(axis=1) > 0).sum() == 1 and y.sum() == 6
    with pytest.raises(IndexError):
        indicator_r(Query(0, 2), 2, 4)


def test_indicator_e_examples():
    rq = nc.Tensor([[2.0, 3.0], [9.0, 9.0]])
    assert indicator_e(Query(1, 0), rq, 3).data.tolist() == [[0, 0], [2, 3], [0, 0]]
    assert (np.abs(indicator_e(Query(2, 1), rq, 4).data).sum(axis=1) > 0).sum() == 1
    assert not indicator_e(Query(0, 0), nc.Tensor(np.zeros((1, 2))), 3).data.any()
    with pytest.raises(IndexError):
        indicator_e(Query(3, 0), rq, 3)


# -- relation GNN -----------------------------------------------------------------------

def _set(params, name, value):
    params[name].data[...] = value


def _update_oracle(h, agg, params, pre):
    z = np.concatenate([h, agg], axis=1) @ params[pre + ".W"].data + params[pre + ".b"].data
    if params.config.layer_norm:
        z = (z - z.mean(axis=1, keepdims=True)) / np.sqrt(z.var(axis=1, keepdims=True) + 1e-5)
        z = z * params[pre + ".ln.g"].data + params[pre + ".ln.b"].data
    return np.maximum(z, 0.0)


@pytest.mark.parametrize("layer_norm", [False, True])
def test_relation_gnn_no_edges_hand_trace(layer_norm):
    p = ModelParams.init(cfg(dim=3, relation_layers=2, layer_norm=layer_norm), seed=4)
    if layer_norm:
        _set(p, "rel.1.ln.g", [0.5, 2.0, 1.0])
        _set(p, "rel.1.ln.b", [0.1, -0.2, 0.3])
    rg = RelationGraph(3, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    out = relation_gnn(rg, Query(0, 1), p).data
    h = np.zeros((3, 3))
    h[1] = 1.0
    for t in range(2):
        h = _update_oracle(h, np.zeros_like(h), p, f"rel.{t}")
    assert np.allclose(out, h, atol=1e-14)


def test_relation_gnn_single_t2h_edge_hand_trace():
    p = ModelParams.init(cfg(dim=2, relation_layers=1, layer_norm=False), seed=0)
    _set(p, "rel.0.W", np.vstack([np.eye(2), np.eye(2)]))
    _set(p, "rel.0.b", np.zeros(2))
    fund = np.array([[9.0, 9.0], [9.0, 9.0], [0.5, -0.3], [9.0, 9.0]])
    _set(p, "R_fund", fund)
    rg = RelationGraph(2, np.array([0]), np.array([FUNDAMENTAL.index("t2h")]), np.array([1]))
    out = relation_gnn(rg, Query(0, 0), p).data
    # relation 0: relu(ones + 0); relation 1: relu(0 + ones * R_fund[t2h])
    assert out.tolist() == [[1.0, 1.0], [0.5, 0.0]]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_relation_gnn_relabel_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = augment_inverses(random_graph(rng, 10, 20, 6))
    rg = lift_relation_graph(g)
    perm = rng.permutation(rg.num_relations)
    rg2 = RelationGraph(rg.num_relations, perm[rg.src], rg.etype, perm[rg.dst])
    p = ModelParams.init(cfg(), seed=seed % 1000)
    q = int(rng.integers(rg.num_relations))
    a = relation_gnn(rg, Query(0, q), p).data
    b = relation_gnn(rg2, Query(0, int(perm[q])), p).data
    assert np.allclose(b[perm], a, atol=1e-12)


def test_relation_gnn_conditioning():
    g = augment_inverses(tiny([(0, "p0", 1), (1, "p5", 2), (2, "p5", 0)]))
    rg = lift_relation_graph(g)
    p = ModelParams.init(cfg(dim=8), seed=1)
    a = relation_gnn(rg, Query(0, 0), p).data
    b = relation_gnn(rg, Query(0, 5), p).data
    assert not np.allclose(a, b)


def test_relation_gnn_batched_blocks_match_single():
    g = augment_inverses(random_graph(np.random.default_rng(2)))
    rg = lift_relation_graph(g)
    p = ModelParams.init(cfg(), seed=2)
    stacked = relation_gnn(rg, [3, 0, 7], p).data
    n = rg.num_relations
    for i, q in enumerate([3, 0, 7]):
        assert np.allclose(stacked[i * n:(i + 1) * n], relation_gnn(rg, Query(0, q), p).data, atol=1e-14)


def test_relation_gnn_shape_errors():
    p = ModelParams.init(cfg(), seed=0)
    rg = RelationGraph(2, np.array([0]), np.array([0]), np.array([1]))
    with pytest.raises(IndexError):
        relation_gnn(rg, Query(0, 2), p)
    p.params["R_fund"] = nc.Parameter(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        relation_gnn(rg, Query(0, 0), p)


# -- relation transform g ------------------------------------------------------------------

def test_relation_transform_examples():
    p = ModelParams.init(cfg(dim=3, entity_layers=2), seed=5)
    rq = nc.Tensor(np.abs(np.random.default_rng(0).normal(size=(4, 3))))
    for n in ("g1.W", "g1.b", "g2.W", "g2.b"):
        _set(p, f"ent.1.{n}", 0.0)
    assert not relation_transform_g(1, rq, p).data.any()
    _set(p, "ent.1.g1.W", np.eye(3))
    _set(p, "ent.1.g2.W", np.eye(3))
    assert np.allclose(relation_transform_g(1, rq, p).data, rq.data)
    w1, b1, w2, b2 = (p[f"ent.0.{n}"].data for n in ("g1.W", "g1.b", "g2.W", "g2.b"))
    b1[:] = [0.1, -0.2, 0.3]
    expect = np.maximum(rq.data @ w1 + b1, 0) @ w2 + b2
    assert np.allclose(relation_transform_g(0, rq, p).data, expect, atol=1e-14)
    with pytest.raises(IndexError):
        relation_transform_g(2, rq, p)


# -- entity GNN ---------------------------------------------------------------------------

@pytest.mark.parametrize("layer_norm", [False, True])
def test_entity_gnn_no_edges_hand_trace(layer_norm):
    p = ModelParams.init(cfg(dim=3, layer_norm=layer_norm), seed=6)
    g = tiny([], n=4)
    rq = nc.Tensor(np.random.default_rng(1).normal(size=(g.num_relations, 3)))
    out = entity_gnn(g, Query(2, 1), rq, None, p).data
    h = np.zeros((4, 3))
    h[2] = rq.data[1]
    for t in range(2):
        h = _update_oracle(h, np.zeros_like(h), p, f"ent.{t}")
    assert np.allclose(out, h, atol=1e-14)


def test_entity_gnn_isolated_entity_changes_nothing():
    p = ModelParams.init(cfg(dim=6), seed=7)
    trip = [(0, "p0", 1), (1, "p5", 2), (2, "p0", 0)]
    g3, g4 = tiny(trip, 3), tiny(trip, 4)
    rq = nc.Tensor(np.random.default_rng(2).normal(size=(g3.num_relations, 6)))
    a = entity_gnn(g3, Query(0, 0), rq, None, p).data
    b = entity_gnn(g4, Query(0, 0), rq, None, p).data
    assert np.allclose(a, b[:3], atol=1e-14)


def test_entity_gnn_reachability_by_layer_count():
    g = tiny([(0, "p0", 1), (1, "p0", 2)])
    rq = nc.Tensor(np.abs(np.random.default_rng(3).normal(size=(g.num_relations, 8))) + 0.1)
    one = entity_gnn(g, Query(0, 0), rq, None, ModelParams.init(cfg(dim=8, entity_layers=1), seed=3)).data
    two = entity_gnn(g, Query(0, 0), rq, None, ModelParams.init(cfg(dim=8, entity_layers=2), seed=3)).data
    assert not one[2].any()
    assert two[2].any()


def test_entity_gnn_errors():
    p = ModelParams.init(cfg(), seed=0)
    g = tiny([(0, "p0", 1)])
    rq = nc.Tensor(np.ones((g.num_relations, 4)))
    with pytest.raises(IndexError):
        entity_gnn(g, Query(5, 0), rq, None, p)
    with pytest.raises(ValueError):
        entity_gnn(g, Query(0, 0), nc.Tensor(np.ones((g.num_relations, 3))), None, p)
    with pytest.raises(ValueError):
        entity_gnn(g, Query(0, 0), rq, nc.Tensor(np.ones((2, 4))), p)


def test_dropped_edges_equal_graph_without_them():
    g = augment_inverses(random_graph(np.random.default_rng(9), 10, 25))
    p = ModelParams.init(cfg(dim=5), seed=9)
    rq = relation_gnn(lift_relation_graph(g), Query(0, 1), p)
    drop = [3, 7]
    keep = np.setdiff1d(np.arange(g.num_triples), drop)
    a = entity_gnn(g, [Query(0, 1)], rq, None, p, drop=[drop]).data
    b = entity_gnn(g.subgraph(keep), Query(0, 1), rq, None, p).data
    assert np.allclose(a, b, atol=1e-14)


# -- scoring -----------------------------------------------------------------------------

def test_score_tail_examples():
    p = ModelParams.init(cfg(), seed=0)
    assert score_tail(nc.Tensor(np.zeros((1, 4))), p).data.item() == 0.5
    states = nc.Tensor(np.random.default_rng(0).normal(scale=3, size=(50, 4)))
    probs = score_tail(states, p).data.ravel()
    logits = score_logits(states, p).data.ravel()
    assert ((probs > 0) & (probs < 1)).all()
    order = np.argsort(logits, kind="stable")
    assert (np.diff(probs[order]) >= 0).all()


# -- predictor ------------------------------------------------------------------------------

def _text(g, dim, seed=0):
    return np.random.default_rng(seed).normal(size=(g.num_entities, dim))


def test_batched_forward_equals_single_queries():
    g = augment_inverses(random_graph(np.random.default_rng(4), 12, 30))
    model = LinkPredictor(ModelParams.init(cfg(fusion=True, text_dim=6, fusion_hidden=5), seed=4))
    ctx = GraphContext(g, _text(g, 6))
    heads, rels = [0, 3, 0, 7], [1, 1, 4, 9]
    batch = model.score(ctx, heads, rels)
    for i, (h, r) in enumerate(zip(heads, rels)):
        assert np.allclose(batch[i], model.score(ctx, [h], [r])[0], atol=1e-13)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_entity_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 10, 25)
    perm = rng.permutation(g.num_entities)  # new id of old entity i is perm[i]
    inv = np.argsort(perm)
    ents = [(g.schema.kinds[g.kinds[j]], g.labels[j]) for j in inv]
    trip = [(perm[h], g.relations[r].name, perm[t], d) for h, r, t, d in
            zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist(), g.created.astype(str).tolist())]
    g2 = KnowledgeGraph.from_triples(g.schema, ents, trip)
    a, b = augment_inverses(g), augment_inverses(g2)
    text = _text(g, 6, seed % 100)
    model = LinkPredictor(ModelParams.init(cfg(fusion=True, text_dim=6, fusion_hidden=5), seed=1))
    sa = model.score(GraphContext(a, text), [0, 1], [1, 3])
    sb = model.score(GraphContext(b, text[inv]), [int(perm[0]), int(perm[1])], [1, 3])
    assert np.allclose(sb[:, perm], sa, atol=1e-12)


def test_fusion_requires_text():
    g = augment_inverses(random_graph(np.random.default_rng(0)))
    model = LinkPredictor(ModelParams.init(cfg(fusion=True, text_dim=6, fusion_hidden=5)))
    with pytest.raises(ValueError):
        model.score(GraphContext(g), [0], [0])


def test_no_entity_parameters():
    p = ModelParams.init(ModelConfig(), seed=0)
    shapes = {p[n].shape for n, _ in p.named()}
    assert p["R_fund"].shape == (4, 64)
    assert set(p.groups()) == set(GROUPS)
    # every parameter's size is fixed by d, layer counts and text width, never by a graph
    p2 = ModelParams.init(ModelConfig(), seed=1)
    assert shapes == {p2[n].shape for n, _ in p2.named()}


def test_state_dict_round_trip_and_mismatch():
    p = ModelParams.init(cfg(), seed=0)
    q = ModelParams.init(cfg(), seed=1)
    q.load_state_dict(p.state_dict())
    assert all(np.array_equal(p[n].data, q[n].data) for n, _ in p.named())
    bad = p.state_dict()
    bad["R_fund"] = np.zeros((3, 4))
    with pytest.raises(ValueError):
        q.load_state_dict(bad)
    with pytest.raises(KeyError):
        q.load_state_dict({"R_fund": np.zeros((4, 4))})


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(dim=64, text_dim=32, fusion=True)
    with pytest.raises(ValueError):
        ModelConfig(entity_layers=0)
