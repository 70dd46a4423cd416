"""Ranking evaluation (MRR, Hits@K) and prediction reports.

Anything with a ``graph`` attribute and a ``score(heads, rels) -> [B, |E|]``
method can be evaluated; ``as_scorer`` wraps the GNN predictor and anything
exposing ``scorer(graph)`` (the TransE baseline does).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .gnn import GraphContext, LinkPredictor
from .kgstore.graph import KnowledgeGraph, augment_inverses
from .kgstore.split import DatasetSplit

HITS_K = (1, 3, 10)
VULN_TASKS = {"cve_cwe": "matchingCWE", "cve_cpe": "matchingCVE"}


class Scorer(Protocol):
    graph: KnowledgeGraph

    def score(self, heads: Sequence[int], rels: Sequence[int]) -> np.ndarray: ...


class ModelScorer:
    def __init__(self, model: LinkPredictor, ctx: GraphContext):
        self.model = model
        self.ctx = ctx
        self.graph = ctx.graph

    def score(self, heads, rels, hide_tails=None) -> np.ndarray:
        return self.model.score(self.ctx, list(heads), list(rels), hide_tails)


def as_scorer(model, g: KnowledgeGraph, text: np.ndarray | None = None) -> Scorer:
    if isinstance(model, LinkPredictor):
        return ModelScorer(model, GraphContext(g, text if model.config.fusion else None))
    if hasattr(model, "scorer"):
        return model.scorer(g)
    if hasattr(model, "score") and hasattr(model, "graph"):
        return model
    raise TypeError(f"cannot score with {type(model).__name__}")


# -- metrics ---------------------------------------------------------------------

def _ranks(ranks: Sequence[float]) -> np.ndarray:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks")
    if (r < 1).any():
        raise ValueError("ranks start at 1")
    return r


def mrr(ranks: Sequence[float]) -> float:
    return float(np.mean(1.0 / _ranks(ranks)))


def hits_at_k(ranks: Sequence[float], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(np.mean(_ranks(ranks) <= k))


@dataclass(frozen=True)
class MetricsReport:
    mrr: float
    hits: dict[int, float]
    count: int

    @classmethod
    def from_ranks(cls, ranks: Sequence[float]) -> "MetricsReport":
        return cls(mrr(ranks), {k: hits_at_k(ranks, k) for k in HITS_K}, len(ranks))

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, **{f"hits@{k}": v for k, v in self.hits.items()}, "queries": self.count}


@dataclass(frozen=True)
class RankingResult:
    query: tuple[int, int]
    truth: int
    candidates: np.ndarray  # descending score
    rank: float
    filtered: bool


def rank_from_scores(scores: np.ndarray, truth: int, candidates: np.ndarray,
                     known_true: set[int] | frozenset[int] = frozenset(), filtered: bool = True) -> tuple[float, np.ndarray]:
    """Mean-rank-on-ties position of ``truth`` among ``candidates``.

    When filtered, candidates in ``known_true`` (other than the truth) are
    dropped first. Returns (rank, surviving candidates by descending score).
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if filtered and known_true:
        drop = np.fromiter((c for c in known_true if c != truth), dtype=np.int64)
        cand = cand[~np.isin(cand, drop)]
    if not np.any(cand == truth):
        raise ValueError(f"truth {truth} is not a candidate")
    s = scores[cand]
    st = scores[truth]
    greater = int(np.count_nonzero(s > st))
    equal = int(np.count_nonzero(s == st))
    order = cand[np.lexsort((cand, -s))]
    return 1.0 + greater + (equal - 1) / 2.0, order


def candidates_for(g: KnowledgeGraph, rel: int) -> np.ndarray:
    """Entities of the query relation's tail kind."""
    return g.entities_of_kind(g.target_kind(rel))


def rank_query(scorer: Scorer, g_inference: KnowledgeGraph, query: tuple[int, int], truth: int,
               known_true: set[int], filtered: bool = True) -> RankingResult:
    head, rel = query
    scores = scorer.score([head], [rel])[0]
    rank, order = rank_from_scores(scores, truth, candidates_for(g_inference, rel), known_true, filtered)
    return RankingResult((head, rel), truth, order, rank, filtered)


# -- split evaluation --------------------------------------------------------------

@dataclass
class Evaluation:
    reports: dict[str, MetricsReport]
    rows: list[tuple[str, str, float, str]] = field(default_factory=list)  # query, task, rank, truth label
    filtered: bool = True

    def summary(self) -> dict:
        return {task: rep.to_dict() for task, rep in self.reports.items()}


def task_relations(task: str, g: KnowledgeGraph, split_tasks: Sequence[str] = ()) -> list[str]:
    if task == "all":
        return list(split_tasks or g.schema.task_relations or g.schema.relation_names())
    if task in VULN_TASKS:
        return [VULN_TASKS[task]]
    if task in g.schema.relation_names():
        return [task]
    raise ValueError(f"unknown task {task!r}")


def task_name(relation: str) -> str:
    for k, v in VULN_TASKS.items():
        if v == relation:
            return k
    return relation


def known_tails(g: KnowledgeGraph, index_sets: Sequence[np.ndarray]) -> dict[tuple[int, int], set[int]]:
    """(head, relation) -> tails over the union of the given triple subsets,
    in both directions (inverse relation ids are r + |forward relations|)."""
    n = g.num_forward_relations
    out: dict[tuple[int, int], set[int]] = {}
    for idx in index_sets:
        if idx is None:
            continue
        for h, r, t in zip(g.heads[idx].tolist(), g.rels[idx].tolist(), g.tails[idx].tolist()):
            out.setdefault((h, r), set()).add(t)
            out.setdefault((t, r + n), set()).add(h)
    return out


def ranking_graph(split: DatasetSplit, augment: bool = True) -> KnowledgeGraph:
    g = split.part(split.ranking_part)
    return augment_inverses(g) if augment else g


def evaluate_split(model, split: DatasetSplit, task: str = "all", filtered: bool = True, part: str = "test",
                   text: np.ndarray | None = None, both_directions: bool = True, augment: bool = True,
                   batch: int = 16) -> Evaluation:
    """Rank every held-out triple of ``part`` against the split's ranking graph.

    Inductive splits rank against the inference graph, transductive ones
    against the training graph. Reports one MetricsReport per task relation and,
    for ``task="all"``, the pooled ``all`` entry.
    """
    g_rank = ranking_graph(split, augment)
    if both_directions and not g_rank.augmented:
        raise ValueError("head-direction queries need the inverse-augmented graph")
    scorer = as_scorer(model, g_rank, text)
    base = split.graph
    rel_names = task_relations(task, base, split.task_relations)
    rel_ids = [base.relation_id(r) for r in rel_names]
    idx = getattr(split, part)
    idx = idx[np.isin(base.rels[idx], rel_ids)]
    if idx.size == 0:
        raise ValueError(f"no {part} triples for task {task!r}")
    known = known_tails(base, [split.train, split.valid, split.test, split.inference])
    n_fwd = base.num_forward_relations
    queries: list[tuple[int, int, int, str]] = []
    for h, r, t in zip(base.heads[idx].tolist(), base.rels[idx].tolist(), base.tails[idx].tolist()):
        name = task_name(base.relations[r].name)
        queries.append((h, r, t, name))
        if both_directions:
            queries.append((t, r + n_fwd, h, name))
    ranks_by_task: dict[str, list[float]] = {}
    rows = []
    for i in range(0, len(queries), batch):
        chunk = queries[i:i + batch]
        scores = scorer.score([q[0] for q in chunk], [q[1] for q in chunk])
        for (h, r, t, name), row in zip(chunk, scores):
            rank, _ = rank_from_scores(row, t, candidates_for(g_rank, r), known.get((h, r), set()), filtered)
            ranks_by_task.setdefault(name, []).append(rank)
            rows.append((f"{base.labels[h]}\t{g_rank.relations[r].name}", name, rank, base.labels[t]))
    reports = {name: MetricsReport.from_ranks(r) for name, r in sorted(ranks_by_task.items())}
    if task == "all":
        reports["all"] = MetricsReport.from_ranks([x for r in ranks_by_task.values() for x in r])
    return Evaluation(reports, rows, filtered)


def random_baseline(split: DatasetSplit, task: str = "all", part: str = "test", filtered: bool = True,
                    both_directions: bool = True) -> float:
    """Expected MRR of scores drawn uniformly at random, for the exact queries
    ``evaluate_split`` would pose: mean of H_N / N over the candidate count N
    left after filtering."""
    g_rank = ranking_graph(split)
    base = split.graph
    rel_ids = [base.relation_id(r) for r in task_relations(task, base, split.task_relations)]
    idx = getattr(split, part)
    idx = idx[np.isin(base.rels[idx], rel_ids)]
    if idx.size == 0:
        raise ValueError(f"no {part} triples for task {task!r}")
    known = known_tails(base, [split.train, split.valid, split.test, split.inference]) if filtered else {}
    n_fwd = base.num_forward_relations
    counts = []
    for h, r, t in zip(base.heads[idx].tolist(), base.rels[idx].tolist(), base.tails[idx].tolist()):
        queries = [(h, r, t)] + ([(t, r + n_fwd, h)] if both_directions else [])
        for q, rel, truth in queries:
            counts.append(len(candidates_for(g_rank, rel)) - len(known.get((q, rel), set()) - {truth}))
    counts = np.asarray(counts)
    harmonic = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, counts.max() + 1))])
    return float(np.mean(harmonic[counts] / counts))


def write_evaluation(ev: Evaluation, tsv_path: str | Path, json_path: str | Path | None = None,
                     config_checksum: str = "") -> None:
    """Tab-separated rows (query head, relation, task, rank, truth) and a summary block."""
    lines = [f"# config_checksum\t{config_checksum}", f"# filtered\t{str(ev.filtered).lower()}",
             "head\trelation\ttask\trank\ttruth"]
    lines += [f"{q}\t{task}\t{rank!r}\t{truth}" for q, task, rank, truth in ev.rows]
    lines.append("# summary")
    lines.append("# task\tMRR\tHits@1\tHits@3\tHits@10\tqueries")
    for task, rep in ev.reports.items():
        lines.append(f"# {task}\t{rep.mrr!r}\t" + "\t".join(repr(rep.hits[k]) for k in HITS_K) + f"\t{rep.count}")
    Path(tsv_path).write_text("\n".join(lines) + "\n")
    if json_path is not None:
        Path(json_path).write_text(json.dumps({"config_checksum": config_checksum, "filtered": ev.filtered,
                                               "reports": ev.summary()}, indent=1, sort_keys=True))


# -- predictions -------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionRow:
    rank: int
    label: str
    score: float


def prediction_query(g: KnowledgeGraph, entity: int, relation: str) -> int:
    """Relation id to query with so that ``entity`` is the head: the relation
    itself when its head kind matches, else its inverse."""
    rid = g.relation_id(relation)
    kind = g.kind_of(entity)
    if g.relations[rid].head_kind == kind:
        return rid
    if g.augmented and g.relations[g.inverse_of(rid)].head_kind == kind:
        return g.inverse_of(rid)
    raise ValueError(f"relation {relation!r} does not connect to a {kind} entity")


def predict_report(model, g_inference: KnowledgeGraph, cve_id: str, relation: str, top_n: int = 10,
                   exclude_known: bool = True, text: np.ndarray | None = None,
                   entity_kind: str | None = "CVE") -> list[PredictionRow]:
    """Top-``top_n`` candidates linked to ``cve_id`` through ``relation``.

    For a relation pointing into the CVE (matchingCVE: CPE -> CVE) the query
    runs through the inverse relation, so the candidates are CPEs.
    """
    kind = entity_kind if entity_kind in g_inference.schema.kinds else None
    try:
        head = g_inference.entity_id(cve_id, kind)
    except KeyError:
        raise KeyError(f"unknown entity {cve_id!r}") from None
    if top_n < 1:
        raise ValueError("top_n must be positive")
    rel = prediction_query(g_inference, head, relation)
    scorer = as_scorer(model, g_inference, text)
    scores = scorer.score([head], [rel])[0]
    cand = candidates_for(g_inference, rel)
    if exclude_known:
        known = g_inference.tails_of(head, rel)
        cand = cand[~np.isin(cand, np.fromiter(known, dtype=np.int64, count=len(known)))]
    order = cand[np.lexsort((cand, -scores[cand]))][:top_n]
    return [PredictionRow(i + 1, g_inference.labels[e], float(scores[e])) for i, e in enumerate(order)]


def write_predictions(rows: Sequence[PredictionRow], txt_path: str | Path, json_path: str | Path | None = None,
                      header: dict | None = None) -> str:
    width = max([len(r.label) for r in rows] + [6])
    lines = [f"{'rank':>4}  {'entity':<{width}}  score"]
    lines += [f"{r.rank:>4}  {r.label:<{width}}  {r.score:.6f}" for r in rows]
    table = "\n".join(lines) + "\n"
    Path(txt_path).write_text(table)
    if json_path is not None:
        Path(json_path).write_text(json.dumps({**(header or {}),
                                               "rows": [{"rank": r.rank, "label": r.label, "score": r.score}
                                                        for r in rows]}, indent=1, sort_keys=True))
    return table
