"""TransE: score(h, r, t) = -||e_h + w_r - e_t||_p, trained with a margin loss.

It learns one vector per entity, so it can only answer queries about entities
present at training time; inductive use is refused.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .kgstore.graph import KnowledgeGraph, augment_inverses
from .kgstore.split import DatasetSplit
from .kgstore.storage import graph_checksum
from .trainer import Adam, read_container, write_container


class TransductiveOnlyError(ValueError):
    """TransE has no embedding for entities unseen during training."""


@dataclass
class TransEConfig:
    dim: int = 64
    margin: float = 1.0
    p: int = 1
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    negatives: int = 4
    seed: int = 0
    inverse_augmentation: bool = True

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.margin <= 0 or self.dim < 1 or self.negatives < 1:
            raise ValueError("margin, dim and negatives must be positive")


@dataclass
class TransEParams:
    entity: np.ndarray
    relation: np.ndarray
    p: int
    trained: np.ndarray  # bool per entity: had a training triple
    graph_checksum: str = ""
    loss_log: list | None = None

    def scorer(self, g: KnowledgeGraph) -> "TransEScorer":
        return TransEScorer(self, g)


def transe_score(h: int, r: int, t: int, params: TransEParams) -> float:
    return -float(np.linalg.norm(params.entity[h] + params.relation[r] - params.entity[t], ord=params.p))


class TransEScorer:
    def __init__(self, params: TransEParams, g: KnowledgeGraph):
        if g.num_entities != params.entity.shape[0] or g.num_relations != params.relation.shape[0]:
            raise TransductiveOnlyError("graph vocabulary differs from the one TransE was trained on")
        unseen = np.flatnonzero((g.degree > 0) & ~params.trained)
        if unseen.size:
            raise TransductiveOnlyError(f"graph has {unseen.size} entities without a trained embedding "
                                        f"(e.g. {g.labels[unseen[0]]!r}); TransE is transductive only")
        self.params = params
        self.graph = g

    def score(self, heads, rels) -> np.ndarray:
        heads = np.asarray(heads, dtype=np.int64)
        bad = heads[~self.params.trained[heads]]
        if bad.size:
            raise TransductiveOnlyError(f"no embedding for unseen entity {self.graph.labels[bad[0]]!r}")
        q = self.params.entity[heads] + self.params.relation[np.asarray(rels, dtype=np.int64)]
        diff = q[:, None, :] - self.params.entity[None, :, :]
        return -np.linalg.norm(diff, ord=self.params.p, axis=2)


def _normalize_rows(a: np.ndarray) -> None:
    a /= np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)


def transe_train(data: KnowledgeGraph | DatasetSplit, config: TransEConfig = TransEConfig()) -> TransEParams:
    """Margin ranking loss max(0, margin + d(pos) - d(neg)) with tails
    corrupted uniformly within the true tail's kind; Adam updates, entity rows
    renormalized to unit L2 norm after every step."""
    if isinstance(data, DatasetSplit):
        if data.mode != "transductive":
            raise TransductiveOnlyError("TransE cannot be trained for an inductive split")
        data = data.part("train")
    fwd_checksum = graph_checksum(data) if not data.augmented else ""
    g = augment_inverses(data) if config.inverse_augmentation and not data.augmented else data
    rng = np.random.default_rng(config.seed)
    lim = 6.0 / np.sqrt(config.dim)
    ent = rng.uniform(-lim, lim, size=(g.num_entities, config.dim))
    rel = rng.uniform(-lim, lim, size=(g.num_relations, config.dim))
    _normalize_rows(ent)
    _normalize_rows(rel)
    E, R = nc.Parameter(ent, name="transe.entity"), nc.Parameter(rel, name="transe.relation")
    opt = Adam([E, R], config.learning_rate)
    kind_pools = {k: g.entities_of_kind(g.schema.kinds[k]) for k in np.unique(g.kinds).tolist()}
    triples = np.stack([g.heads, g.rels, g.tails], axis=1)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            b = triples[order[i:i + config.batch_size]]
            k = config.negatives
            negs = np.empty((len(b), k), dtype=np.int64)
            for j, (h, r, t) in enumerate(b.tolist()):
                pool = kind_pools[int(g.kinds[t])]
                trues = g.tails_of(h, r)
                draw = pool[rng.integers(pool.size, size=k * 4)]
                draw = draw[~np.isin(draw, list(trues))] if len(trues) < pool.size else draw
                negs[j] = draw[:k] if draw.size >= k else pool[rng.integers(pool.size, size=k)]
            hh, rr, tt = np.repeat(b[:, 0], k), np.repeat(b[:, 1], k), np.repeat(b[:, 2], k)
            E.zero_grad()
            R.zero_grad()
            q = nc.add(nc.gather_rows(E, hh), nc.gather_rows(R, rr))
            d_pos = nc.row_norm(nc.sub(q, nc.gather_rows(E, tt)), config.p)
            d_neg = nc.row_norm(nc.sub(q, nc.gather_rows(E, negs.reshape(-1))), config.p)
            margin = nc.Tensor(np.full(d_pos.shape, config.margin))
            loss = nc.mean_all(nc.relu(nc.add(margin, nc.sub(d_pos, d_neg))))
            nc.backward(loss)
            opt.step()
            _normalize_rows(E.data)
            total += float(loss.data) * len(b)
        losses.append(total / len(triples))
    return TransEParams(E.data.copy(), R.data.copy(), config.p, g.degree > 0, fwd_checksum, losses)


def save_transe(params: TransEParams, path: str | Path, config: TransEConfig | None = None) -> None:
    header = {"p": params.p, "graph_checksum": params.graph_checksum, "config": asdict(config) if config else None,
              "loss_log": params.loss_log or []}
    write_container(path, "transe", header, {"transe.entity": params.entity, "transe.relation": params.relation,
                                             "transe.trained": params.trained.astype(np.float64)})


def load_transe(path: str | Path) -> TransEParams:
    head, blocks = read_container(path, "transe")
    return TransEParams(blocks["transe.entity"], blocks["transe.relation"], int(head["p"]),
                        blocks["transe.trained"] > 0.5, head["graph_checksum"], list(head["loss_log"]))
