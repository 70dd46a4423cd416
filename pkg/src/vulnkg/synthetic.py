"""Synthetic graphs with planted structure, for tests and demos.

Three kinds X, Y, Z and three relations: ``r1`` (X->Y), ``r2`` (Y->Z) and
``r3`` (X->Z), where r3 mostly follows the composition r1 then r2, with a
fraction of links dropped and a few random ones added.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .kgstore.graph import KnowledgeGraph, Schema, register_schema

SYNTH_SCHEMA = register_schema(Schema(
    name="synthetic",
    kinds=("X", "Y", "Z"),
    relations=(("r1", "X", "Y"), ("r2", "Y", "Z"), ("r3", "X", "Z")),
    task_relations=("r3",),
))

BASE_START = dt.date(2020, 1, 1)
LATE_START = dt.date(2023, 2, 1)
TOPICS = ("overflow", "injection", "traversal", "disclosure", "exhaustion", "deserialization", "race",
          "bypass")


@dataclass(frozen=True)
class PlantedConfig:
    n_x: int = 150
    n_y: int = 50
    n_z: int = 45
    r1_per_x: int = 2
    r2_per_y: tuple[int, int] = (1, 3)
    keep: float = 0.85
    noise_per_x: float = 0.3
    new_fraction: float = 0.0
    descriptions: bool = False


def planted_graph(seed: int = 0, config: PlantedConfig = PlantedConfig()) -> KnowledgeGraph:
    """Graph with r3 close to r1 then r2.

    With ``new_fraction`` > 0 that share of X entities is "late": all their
    triples are dated after 2023-02-01, so a temporal split at 2023-01-01
    leaves them unseen in training. With ``descriptions`` every Z carries a
    topic word and every X description lists the topics of its r3 targets.
    """
    c = config
    rng = np.random.default_rng(seed)
    xs = [f"x{i:03d}" for i in range(c.n_x)]
    ys = [f"y{i:03d}" for i in range(c.n_y)]
    zs = [f"z{i:03d}" for i in range(c.n_z)]
    entities = [("X", s) for s in xs] + [("Y", s) for s in ys] + [("Z", s) for s in zs]
    oy, oz = c.n_x, c.n_x + c.n_y
    late = set(rng.choice(c.n_x, size=int(round(c.new_fraction * c.n_x)), replace=False).tolist())

    def when(x: int | None) -> dt.date:
        if x is not None and x in late:
            return LATE_START + dt.timedelta(days=int(rng.integers(0, 200)))
        return BASE_START + dt.timedelta(days=int(rng.integers(0, 1000)))

    triples: list[tuple[int, str, int, dt.date]] = []
    r2: dict[int, list[int]] = {}
    for y in range(c.n_y):
        k = int(rng.integers(c.r2_per_y[0], c.r2_per_y[1] + 1))
        r2[y] = sorted(rng.choice(c.n_z, size=k, replace=False).tolist())
        triples += [(oy + y, "r2", oz + z, when(None)) for z in r2[y]]
    r3_targets: dict[int, set[int]] = {}
    for x in range(c.n_x):
        targets: set[int] = set()
        for y in rng.choice(c.n_y, size=c.r1_per_x, replace=False).tolist():
            triples.append((x, "r1", oy + y, when(x)))
            targets.update(z for z in r2[y] if rng.random() < c.keep)
        if rng.random() < c.noise_per_x:
            targets.add(int(rng.integers(c.n_z)))
        r3_targets[x] = targets
        triples += [(x, "r3", oz + z, when(x)) for z in sorted(targets)]
    descriptions = {}
    if c.descriptions:
        topic_of = {z: TOPICS[int(rng.integers(len(TOPICS)))] for z in range(c.n_z)}
        for z in range(c.n_z):
            descriptions[zs[z]] = f"weakness family {topic_of[z]} variant {z}"
        for x in range(c.n_x):
            words = sorted({topic_of[z] for z in r3_targets[x]}) or ["none"]
            descriptions[xs[x]] = "asset exposed to " + " and ".join(words)
    return KnowledgeGraph.from_triples(SYNTH_SCHEMA, entities, triples, descriptions)


def toy_graph() -> KnowledgeGraph:
    """Twenty hand-placed triples: 8 r1, 4 r2, 8 r3."""
    entities = [("X", f"x{i}") for i in range(8)] + [("Y", f"y{i}") for i in range(4)] + \
        [("Z", f"z{i}") for i in range(4)]
    day = dt.date(2021, 6, 1)
    triples = [(x, "r1", 8 + x // 2, day) for x in range(8)]
    triples += [(8 + y, "r2", 12 + y, day) for y in range(4)]
    triples += [(x, "r3", 12 + (x // 2 + x % 2) % 4, day) for x in range(8)]
    return KnowledgeGraph.from_triples(SYNTH_SCHEMA, entities, triples)


def random_baseline_mrr(candidate_counts) -> float:
    """Expected MRR when the truth's rank is uniform over N candidates: mean of H_N / N."""
    counts = np.asarray(list(candidate_counts), dtype=np.int64)
    if counts.size == 0 or counts.min() < 1:
        raise ValueError("need at least one candidate per query")
    harmonic = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, counts.max() + 1))])
    return float(np.mean(harmonic[counts] / counts))
