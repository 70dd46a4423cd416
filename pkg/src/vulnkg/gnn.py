"""Two-level relational GNN link predictor.

A relation graph is lifted from the entity graph (relations become nodes,
linked by how they share entities). A query-conditioned GNN over it yields one
feature vector per relation; a second GNN over the entity graph uses those
vectors as DistMult-style edge weights, starting from the query head only, and
an MLP scores every entity as a candidate tail.

No parameter is tied to a particular entity, so the model runs unchanged on
graphs containing entities it never saw during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import numcore as nc
from .fusion import FusionWeights, fused_features, incidence_mean
from .kgstore.graph import KnowledgeGraph

FUNDAMENTAL = ("h2h", "h2t", "t2h", "t2t")


# -- relation graph ----------------------------------------------------------

@dataclass(frozen=True)
class RelationGraph:
    """Labelled edges (src relation, interaction type, dst relation)."""

    num_relations: int
    src: np.ndarray
    etype: np.ndarray
    dst: np.ndarray

    def edge_set(self) -> set[tuple[int, str, int]]:
        return {(int(a), FUNDAMENTAL[int(k)], int(b)) for a, k, b in zip(self.src, self.etype, self.dst)}

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])


def lift_relation_graph(g: KnowledgeGraph) -> RelationGraph:
    """Relations r1, r2 are linked by
    h2h if they share a head, t2t if they share a tail, t2h if a tail of r1 is
    a head of r2, and h2t if a head of r1 is a tail of r2 (self-pairs included).
    """
    n_e, n_r = g.num_entities, g.num_relations
    ones = np.ones(g.num_triples)
    heads = sp.csr_matrix((ones, (g.heads, g.rels)), shape=(n_e, n_r))
    tails = sp.csr_matrix((ones, (g.tails, g.rels)), shape=(n_e, n_r))
    heads.data[:] = 1.0
    tails.data[:] = 1.0
    blocks = {"h2h": heads.T @ heads, "h2t": heads.T @ tails, "t2h": tails.T @ heads, "t2t": tails.T @ tails}
    src, typ, dst = [], [], []
    for k, name in enumerate(FUNDAMENTAL):
        m = sp.coo_matrix(blocks[name])
        m.sum_duplicates()
        keep = m.data > 0
        order = np.lexsort((m.col[keep], m.row[keep]))
        src.append(m.row[keep][order])
        dst.append(m.col[keep][order])
        typ.append(np.full(int(keep.sum()), k))
    return RelationGraph(n_r, np.concatenate(src).astype(np.int64), np.concatenate(typ).astype(np.int64),
                         np.concatenate(dst).astype(np.int64))


# -- hyperparameters and parameters -----------------------------------------

@dataclass
class ModelConfig:
    dim: int = 64
    relation_layers: int = 6
    entity_layers: int = 6
    fusion: bool = True
    text_dim: int = 1536
    fusion_hidden: int = 800
    remove_query_edges: bool = True
    layer_norm: bool = True  # normalize each update before the ReLU; keeps deep stacks from blowing up

    def __post_init__(self):
        if self.fusion and self.text_dim < self.dim:
            raise ValueError("text embedding dimension must be at least the GNN dimension")
        if self.dim < 1 or self.relation_layers < 1 or self.entity_layers < 1:
            raise ValueError("dimensions and layer counts must be positive")


GROUPS = ("R_fund", "relation_gnn", "entity_gnn", "scorer", "fusion")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class ModelParams:
    """All trainable weights, keyed by name, plus the hyperparameters."""

    def __init__(self, config: ModelConfig, params: Mapping[str, nc.Parameter]):
        self.config = config
        self.params = dict(params)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d = config.dim
        p: dict[str, np.ndarray] = {"R_fund": _glorot(rng, 4, d)}
        for t in range(config.relation_layers):
            p[f"rel.{t}.W"] = _glorot(rng, 2 * d, d)
            p[f"rel.{t}.b"] = np.zeros(d)
            if config.layer_norm:
                p[f"rel.{t}.ln.g"], p[f"rel.{t}.ln.b"] = np.ones(d), np.zeros(d)
        for t in range(config.entity_layers):
            p[f"ent.{t}.W"] = _glorot(rng, 2 * d, d)
            p[f"ent.{t}.b"] = np.zeros(d)
            if config.layer_norm:
                p[f"ent.{t}.ln.g"], p[f"ent.{t}.ln.b"] = np.ones(d), np.zeros(d)
            p[f"ent.{t}.g1.W"] = _glorot(rng, d, d)
            p[f"ent.{t}.g1.b"] = np.zeros(d)
            p[f"ent.{t}.g2.W"] = _glorot(rng, d, d)
            p[f"ent.{t}.g2.b"] = np.zeros(d)
        p["score.W1"] = _glorot(rng, d, d)
        p["score.b1"] = np.zeros(d)
        p["score.W2"] = _glorot(rng, d, 1)
        p["score.b2"] = np.zeros(1)
        params = {k: nc.Parameter(v, name=k) for k, v in p.items()}
        if config.fusion:
            params.update(FusionWeights.init(rng, config.text_dim, d, config.fusion_hidden).named())
        return cls(config, params)

    def __getitem__(self, name: str) -> nc.Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def named(self):
        return self.params.items()

    def group_of(self, name: str) -> str:
        if name == "R_fund":
            return "R_fund"
        return {"rel": "relation_gnn", "ent": "entity_gnn", "score": "scorer", "fusion": "fusion"}[name.split(".")[0]]

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name in self.params:
            out.setdefault(self.group_of(name), []).append(name)
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise KeyError("parameter names differ")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k].data[...] = v

    def config_dict(self) -> dict:
        return asdict(self.config)


# -- building blocks -----------------------------------------------------------

@dataclass(frozen=True)
class Query:
    head: int
    relation: int


def _linear(x: nc.Tensor, w: nc.Tensor, b: nc.Tensor) -> nc.Tensor:
    return nc.add_bias(nc.matmul(x, w), b)


def _update(h: nc.Tensor, agg: nc.Tensor, params: "ModelParams", pre: str) -> nc.Tensor:
    """ReLU(Linear([h || agg])), layer-normalized before the ReLU when configured."""
    z = _linear(nc.concat([h, agg]), params[pre + ".W"], params[pre + ".b"])
    if params.config.layer_norm:
        z = nc.layer_norm(z, params[pre + ".ln.g"], params[pre + ".ln.b"])
    return nc.relu(z)


def indicator_r(query: Query, relation_count: int, dim: int) -> nc.Tensor:
    if not 0 <= query.relation < relation_count:
        raise IndexError("query relation out of range")
    init = np.zeros((relation_count, dim))
    init[query.relation] = 1.0
    return nc.Tensor(init)


def indicator_e(query: Query, rq: nc.Tensor, entity_count: int) -> nc.Tensor:
    if not 0 <= query.head < entity_count:
        raise IndexError("query head out of range")
    row = nc.gather_rows(rq, [query.relation])
    return nc.segment_sum(row, [query.head], entity_count)


def _offsets(base: np.ndarray, block: int, count: int) -> np.ndarray:
    return (base[None, :] + (np.arange(count) * block)[:, None]).reshape(-1)


def relation_gnn(rg: RelationGraph, query: Query | Sequence[int], params: ModelParams) -> nc.Tensor:
    """Query-conditioned relation features R_q, an |R| x d matrix.

    Given a sequence of query relations instead of one query, the per-relation
    blocks are computed in one pass and stacked: [len(seq) * |R|, d].
    """
    cfg = params.config
    query_relations = [query.relation] if isinstance(query, Query) else list(query)
    n_r, q = rg.num_relations, len(query_relations)
    qrel = np.asarray(query_relations, dtype=np.int64)
    if q == 0 or qrel.min() < 0 or qrel.max() >= n_r:
        raise IndexError("query relation out of range")
    init = np.zeros((q * n_r, cfg.dim))
    init[np.arange(q) * n_r + qrel] = 1.0
    h = nc.Tensor(init)
    src, dst = _offsets(rg.src, n_r, q), _offsets(rg.dst, n_r, q)
    etype = np.tile(rg.etype, q)
    fund = params["R_fund"]
    if fund.shape != (len(FUNDAMENTAL), cfg.dim):
        raise ValueError("R_fund has the wrong shape")
    for t in range(cfg.relation_layers):
        msg = nc.mul(nc.gather_rows(h, src), nc.gather_rows(fund, etype))
        agg = nc.segment_sum(msg, dst, q * n_r)
        h = _update(h, agg, params, f"rel.{t}")
    return h


def relation_transform_g(layer: int, rq: nc.Tensor, params: ModelParams) -> nc.Tensor:
    """Per-layer two-layer MLP applied to every relation row."""
    if not 0 <= layer < params.config.entity_layers:
        raise IndexError("layer out of range")
    pre = f"ent.{layer}"
    hidden = nc.relu(_linear(rq, params[pre + ".g1.W"], params[pre + ".g1.b"]))
    return _linear(hidden, params[pre + ".g2.W"], params[pre + ".g2.b"])


@dataclass
class EdgeBatch:
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray


def batch_edges(g: KnowledgeGraph, slots: np.ndarray, drop: Sequence[Sequence[int]] | None = None) -> EdgeBatch:
    """Replicate the graph's edges once per query; relation rows point into the
    query's relation block. ``drop[b]`` lists edge ids hidden from query b."""
    b, n_e, n_r, m = len(slots), g.num_entities, g.num_relations, g.num_triples
    src = _offsets(g.heads, n_e, b)
    dst = _offsets(g.tails, n_e, b)
    rel = (g.rels[None, :] + (np.asarray(slots) * n_r)[:, None]).reshape(-1)
    if drop is not None and any(len(x) for x in drop):
        mask = np.ones(b * m, dtype=bool)
        for i, ids in enumerate(drop):
            if len(ids):
                mask[i * m + np.asarray(ids, dtype=np.int64)] = False
        src, rel, dst = src[mask], rel[mask], dst[mask]
    return EdgeBatch(src, rel, dst)


def entity_gnn(g: KnowledgeGraph, queries: Query | Sequence[Query], rq: nc.Tensor, fused: nc.Tensor | None,
               params: ModelParams, slots: Sequence[int] | None = None,
               drop: Sequence[Sequence[int]] | None = None) -> nc.Tensor:
    """Entity states [|E|, d] for one query, or stacked [B * |E|, d] for B queries.

    ``rq`` stacks one |R| x d block per distinct query relation and ``slots[b]``
    names the block used by query b (default: block b). ``fused`` (optional)
    is added to the initial states and has the same stacked shape as the output.
    """
    cfg = params.config
    queries = [queries] if isinstance(queries, Query) else list(queries)
    n_e, n_r, b = g.num_entities, g.num_relations, len(queries)
    slots = np.arange(b) if slots is None else np.asarray(slots, dtype=np.int64)
    heads = np.array([q.head for q in queries], dtype=np.int64)
    rels = np.array([q.relation for q in queries], dtype=np.int64)
    if heads.min() < 0 or heads.max() >= n_e:
        raise IndexError("query head absent from graph")
    if rq.shape[1] != cfg.dim or rq.shape[0] % n_r:
        raise ValueError(f"relation features of shape {rq.shape} do not match |R|={n_r}, d={cfg.dim}")
    boundary = nc.gather_rows(rq, slots * n_r + rels)
    h = nc.segment_sum(boundary, np.arange(b) * n_e + heads, b * n_e)
    if fused is not None:
        if fused.shape != h.shape:
            raise ValueError(f"fused features {fused.shape} do not match states {h.shape}")
        h = nc.add(h, fused)
    edges = batch_edges(g, slots, drop)
    for t in range(cfg.entity_layers):
        grel = relation_transform_g(t, rq, params)
        msg = nc.mul(nc.gather_rows(h, edges.src), nc.gather_rows(grel, edges.rel))
        agg = nc.segment_sum(msg, edges.dst, b * n_e)
        h = _update(h, agg, params, f"ent.{t}")
    return h


def score_logits(states: nc.Tensor, params: ModelParams) -> nc.Tensor:
    hidden = nc.relu(_linear(states, params["score.W1"], params["score.b1"]))
    return _linear(hidden, params["score.W2"], params["score.b2"])


def score_tail(states: nc.Tensor, params: ModelParams) -> nc.Tensor:
    """Probability that each entity is the query's tail, shape [n, 1]."""
    return nc.sigmoid(score_logits(states, params))


# -- batched prediction ----------------------------------------------------------

class GraphContext:
    """Per-graph data reused across batches: lift, edge lookup, incidence, text."""

    def __init__(self, g: KnowledgeGraph, text: np.ndarray | None = None):
        self.graph = g
        self.relation_graph = lift_relation_graph(g)
        self.incidence = incidence_mean(g)
        self.text = text
        self._edge_of = {k: i for i, k in enumerate(g.triple_keys().tolist())}

    def edge_ids(self, h: int, r: int, t: int) -> list[int]:
        """Ids of the edge (h, r, t) and of its inverse, where present."""
        g = self.graph
        e, n_r = max(g.num_entities, 1), max(g.num_relations, 1)
        pairs = [(h, r, t)]
        if g.augmented:
            pairs.append((t, g.inverse_of(r), h))
        out = []
        for a, b, c in pairs:
            i = self._edge_of.get((a * n_r + b) * e + c)
            if i is not None:
                out.append(i)
        return out


class LinkPredictor:
    """Scores every entity as the tail of (head, relation, ?) queries."""

    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def forward(self, ctx: GraphContext, heads: Sequence[int], rels: Sequence[int],
                hide_tails: Sequence[int | None] | None = None) -> nc.Tensor:
        """Logits [B * |E|, 1] (query-major). With ``remove_query_edges`` set,
        query b does not see the edge (head_b, rel_b, hide_tails[b]) or its inverse."""
        cfg, g = self.config, ctx.graph
        rels = np.asarray(rels, dtype=np.int64)
        uniq, slots = np.unique(rels, return_inverse=True)
        rq = relation_gnn(ctx.relation_graph, uniq.tolist(), self.params)
        fused = None
        if cfg.fusion:
            if ctx.text is None:
                raise ValueError("fusion is enabled but the graph context has no text embeddings")
            fused = fused_features(g, ctx.text, rq, slots, FusionWeights.from_params(self.params.params),
                                   ctx.incidence)
        drop = None
        if cfg.remove_query_edges and hide_tails is not None:
            drop = [[] if t is None else ctx.edge_ids(int(h), int(r), int(t))
                    for h, r, t in zip(heads, rels, hide_tails)]
        queries = [Query(int(h), int(r)) for h, r in zip(heads, rels)]
        states = entity_gnn(g, queries, rq, fused, self.params, slots, drop)
        return score_logits(states, self.params)

    def score(self, ctx: GraphContext, heads: Sequence[int], rels: Sequence[int],
              hide_tails: Sequence[int | None] | None = None, chunk: int = 16) -> np.ndarray:
        """Logit matrix [B, |E|] computed without recording gradients."""
        n_e = ctx.graph.num_entities
        out = []
        with nc.no_grad():
            for i in range(0, len(heads), chunk):
                hide = None if hide_tails is None else hide_tails[i:i + chunk]
                logits = self.forward(ctx, heads[i:i + chunk], rels[i:i + chunk], hide)
                out.append(logits.data.reshape(-1, n_e))
        return np.concatenate(out) if out else np.zeros((0, n_e))
