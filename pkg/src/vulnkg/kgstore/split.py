"""Transductive and temporal-inductive dataset splits."""
from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import KnowledgeGraph


class SplitWarning(UserWarning):
    pass


@dataclass
class DatasetSplit:
    """Index arrays into the forward triples of ``graph``."""

    mode: str
    graph: KnowledgeGraph
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    inference: np.ndarray | None = None
    train_cutoff: dt.date | None = None
    test_cutoff: dt.date | None = None
    seed: int | None = None
    task_relations: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def part(self, name: str) -> KnowledgeGraph:
        idx = getattr(self, name)
        if idx is None:
            raise ValueError(f"split has no {name} part")
        return self.graph.subgraph(idx)

    @property
    def ranking_part(self) -> str:
        """The graph queries are answered against: inference when inductive."""
        return "inference" if self.mode == "inductive" else "train"

    def counts(self) -> dict[str, int]:
        out = {k: int(len(getattr(self, k))) for k in ("train", "valid", "test")}
        if self.inference is not None:
            out["inference"] = int(len(self.inference))
        return out

    def to_json(self) -> dict:
        d = {"mode": self.mode, "seed": self.seed, "task_relations": list(self.task_relations),
             "train_cutoff": self.train_cutoff and self.train_cutoff.isoformat(),
             "test_cutoff": self.test_cutoff and self.test_cutoff.isoformat(),
             "counts": self.counts(), "meta": self.meta}
        for k in ("train", "valid", "test", "inference"):
            v = getattr(self, k)
            d[k] = None if v is None else v.tolist()
        return d

    @classmethod
    def from_json(cls, d: dict, graph: KnowledgeGraph) -> "DatasetSplit":
        arr = lambda v: None if v is None else np.asarray(v, dtype=np.int64)
        date = lambda v: None if v is None else dt.date.fromisoformat(v)
        return cls(d["mode"], graph, arr(d["train"]), arr(d["valid"]), arr(d["test"]), arr(d.get("inference")),
                   date(d.get("train_cutoff")), date(d.get("test_cutoff")), d.get("seed"),
                   tuple(d.get("task_relations", ())), d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path, graph: KnowledgeGraph) -> "DatasetSplit":
        return cls.from_json(json.loads(Path(path).read_text()), graph)


def _task_rel_ids(g: KnowledgeGraph, task_relations: Sequence[str] | None) -> tuple[tuple[str, ...], np.ndarray]:
    names = tuple(task_relations) if task_relations else (g.schema.task_relations or tuple(g.schema.relation_names()))
    return names, np.array([g.relation_id(n) for n in names], dtype=np.int64)


def _pick_with_coverage(g: KnowledgeGraph, candidates: np.ndarray, pool_mask: np.ndarray,
                        targets: Sequence[int]) -> list[np.ndarray]:
    """Greedily move candidates out of the pool while every endpoint keeps at
    least one pooled triple. Returns one index array per target size."""
    deg = np.bincount(g.heads[pool_mask], minlength=g.num_entities) + \
        np.bincount(g.tails[pool_mask], minlength=g.num_entities)
    picked: list[list[int]] = [[] for _ in targets]
    slot = 0
    for i in candidates:
        while slot < len(targets) and len(picked[slot]) >= targets[slot]:
            slot += 1
        if slot == len(targets):
            break
        h, t = g.heads[i], g.tails[i]
        need = 2 if h == t else 1
        if deg[h] > need and deg[t] > need:
            deg[h] -= 1
            deg[t] -= 1
            picked[slot].append(int(i))
    short = [(n, len(p)) for n, p in zip(targets, picked) if len(p) < n]
    if short:
        warnings.warn(f"coverage constraint limited held-out sizes: wanted/got {short}", SplitWarning, stacklevel=3)
    return [np.array(sorted(p), dtype=np.int64) for p in picked]


def split_transductive(g: KnowledgeGraph, valid_fraction: float, test_fraction: float, seed: int,
                       task_relations: Sequence[str] | None = None) -> DatasetSplit:
    """Random held-out task triples; every held-out endpoint stays in train.

    Fractions are of the total triple count. Only ``task_relations`` triples
    (the schema's task relations by default) are eligible for valid/test.
    """
    if g.augmented:
        raise ValueError("split the forward graph, not an inverse-augmented one")
    if valid_fraction <= 0 or test_fraction <= 0 or valid_fraction + test_fraction >= 1:
        raise ValueError("fractions must be positive and sum below 1")
    names, rel_ids = _task_rel_ids(g, task_relations)
    rng = np.random.default_rng(seed)
    eligible = np.flatnonzero(np.isin(g.rels, rel_ids))
    candidates = rng.permutation(eligible)
    n = g.num_triples
    n_test, n_valid = int(round(test_fraction * n)), int(round(valid_fraction * n))
    test, valid = _pick_with_coverage(g, candidates, np.ones(n, dtype=bool), [n_test, n_valid])
    held = np.zeros(n, dtype=bool)
    held[test] = held[valid] = True
    train = np.flatnonzero(~held)
    return DatasetSplit("transductive", g, train, valid, test, seed=seed, task_relations=names)


def split_inductive(g: KnowledgeGraph, train_cutoff: dt.date, test_cutoff: dt.date, valid_fraction: float,
                    seed: int, test_fraction: float = 0.02,
                    task_relations: Sequence[str] | None = None) -> DatasetSplit:
    """Temporal split: train up to ``train_cutoff``; later triples up to
    ``test_cutoff`` extend the inference graph or are held out.

    Held-out fractions are of the post-cutoff triples. Held-out endpoints keep
    at least one triple in the inference graph so queries stay answerable.
    """
    if g.augmented:
        raise ValueError("split the forward graph, not an inverse-augmented one")
    if not train_cutoff < test_cutoff:
        raise ValueError("train_cutoff must precede test_cutoff")
    if valid_fraction < 0 or test_fraction <= 0 or valid_fraction + test_fraction >= 1:
        raise ValueError("bad held-out fractions")
    names, rel_ids = _task_rel_ids(g, task_relations)
    c1, c2 = np.datetime64(train_cutoff, "D"), np.datetime64(test_cutoff, "D")
    in_train = g.created <= c1
    later = (g.created > c1) & (g.created <= c2)
    if not later.any():
        raise ValueError(f"no triples dated after {train_cutoff}")
    rng = np.random.default_rng(seed)
    eligible = np.flatnonzero(later & np.isin(g.rels, rel_ids))
    candidates = rng.permutation(eligible)
    n_later = int(later.sum())
    n_test, n_valid = int(round(test_fraction * n_later)), int(round(valid_fraction * n_later))
    test, valid = _pick_with_coverage(g, candidates, in_train | later, [n_test, n_valid])
    held = np.zeros(g.num_triples, dtype=bool)
    held[test] = held[valid] = True
    train = np.flatnonzero(in_train)
    inference = np.flatnonzero((in_train | later) & ~held)
    return DatasetSplit("inductive", g, train, valid, test, inference, train_cutoff, test_cutoff, seed, names)
