"""Typed knowledge graph: entity catalog, relation vocabulary, dated triples."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

INVERSE_SUFFIX = "_inv"


@dataclass(frozen=True)
class Schema:
    """Entity kinds and the legal (head kind, relation, tail kind) signatures."""

    name: str
    kinds: tuple[str, ...]
    relations: tuple[tuple[str, str, str], ...]
    task_relations: tuple[str, ...] = ()

    def relation_names(self) -> list[str]:
        return [r[0] for r in self.relations]

    def signature(self, relation: str) -> tuple[str, str]:
        for name, h, t in self.relations:
            if name == relation:
                return h, t
        raise KeyError(f"relation {relation!r} not in schema {self.name!r}")


VULN_KINDS = ("CVE", "CWE", "CPE", "Vendor", "Component", "Language", "Technology", "Consequence",
              "ExploitationLikelihood")

VULN_SCHEMA = Schema(
    name="vulnerability",
    kinds=VULN_KINDS,
    relations=(
        ("matchingCWE", "CVE", "CWE"),
        ("matchingCVE", "CPE", "CVE"),
        ("hasVendor", "CPE", "Vendor"),
        ("hasComponent", "CPE", "Component"),
        ("childOf", "CWE", "CWE"),
        ("peerOf", "CWE", "CWE"),
        ("canPreceed", "CWE", "CWE"),
        ("memberOf", "CWE", "CWE"),
        ("hasLanguage", "CWE", "Language"),
        ("hasTechnology", "CWE", "Technology"),
        ("hasExploitationLikelihood", "CWE", "ExploitationLikelihood"),
        ("hasConsequence", "CWE", "Consequence"),
    ),
    task_relations=("matchingCWE", "matchingCVE"),
)

SCHEMAS: dict[str, Schema] = {VULN_SCHEMA.name: VULN_SCHEMA}


def register_schema(schema: Schema) -> Schema:
    SCHEMAS[schema.name] = schema
    return schema


@dataclass(frozen=True)
class RelationType:
    name: str
    head_kind: str
    tail_kind: str
    is_inverse: bool = False

    @property
    def base_name(self) -> str:
        return self.name[: -len(INVERSE_SUFFIX)] if self.is_inverse else self.name


def _as_date(x) -> dt.date:
    if isinstance(x, dt.datetime):
        return x.date()
    if isinstance(x, dt.date):
        return x
    return dt.date.fromisoformat(str(x)[:10])


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable graph. Entity ids index ``labels``/``kinds``; relation ids index
    ``relations`` (forward relations first, inverses after when augmented)."""

    schema: Schema
    labels: tuple[str, ...]
    kinds: np.ndarray
    relations: tuple[RelationType, ...]
    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    created: np.ndarray  # datetime64[D]
    descriptions: Mapping[str, str] = field(default_factory=dict)
    augmented: bool = False

    # -- construction ----------------------------------------------------
    @classmethod
    def from_triples(cls, schema: Schema, entities: Sequence[tuple[str, str]],
                     triples: Iterable[tuple[int, str, int, object]],
                     descriptions: Mapping[str, str] | None = None) -> "KnowledgeGraph":
        """``entities`` are (kind, label); triples are (head id, relation name, tail id, date)."""
        kind_idx = {k: i for i, k in enumerate(schema.kinds)}
        labels = tuple(lab for _, lab in entities)
        kinds = np.array([kind_idx[k] for k, _ in entities], dtype=np.int64)
        rel_types = tuple(RelationType(n, h, t) for n, h, t in schema.relations)
        rel_idx = {r.name: i for i, r in enumerate(rel_types)}
        best: dict[tuple[int, int, int], dt.date] = {}
        for h, r, t, when in triples:
            key = (int(h), rel_idx[r], int(t))
            d = _as_date(when)
            if key not in best or d < best[key]:
                best[key] = d
        keys = sorted(best)
        arr = np.array(keys, dtype=np.int64).reshape(-1, 3)
        created = np.array([np.datetime64(best[k], "D") for k in keys], dtype="datetime64[D]")
        g = cls(schema, labels, kinds, rel_types, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(),
                created, dict(descriptions or {}))
        g.validate()
        return g

    def validate(self) -> None:
        n = len(self.labels)
        if len(self.kinds) != n:
            raise ValueError("kinds/labels length mismatch")
        if len(set(zip(self.kinds.tolist(), self.labels))) != n:
            raise ValueError("duplicate (kind, label) entity")
        if self.num_triples:
            if self.heads.min() < 0 or self.heads.max() >= n or self.tails.min() < 0 or self.tails.max() >= n:
                raise ValueError("triple endpoint outside the entity catalog")
            if self.rels.min() < 0 or self.rels.max() >= len(self.relations):
                raise ValueError("unknown relation id")
            if len(np.unique(self.triple_keys())) != self.num_triples:
                raise ValueError("duplicate triples")

    def with_triples(self, heads, rels, tails, created) -> "KnowledgeGraph":
        """Same catalog and vocabulary, different triple list."""
        return KnowledgeGraph(self.schema, self.labels, self.kinds, self.relations,
                              np.asarray(heads, dtype=np.int64), np.asarray(rels, dtype=np.int64),
                              np.asarray(tails, dtype=np.int64), np.asarray(created, dtype="datetime64[D]"),
                              self.descriptions, self.augmented)

    def subgraph(self, index) -> "KnowledgeGraph":
        index = np.asarray(index, dtype=np.int64)
        return self.with_triples(self.heads[index], self.rels[index], self.tails[index], self.created[index])

    # -- basic properties ------------------------------------------------
    @property
    def num_entities(self) -> int:
        return len(self.labels)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_forward_relations(self) -> int:
        return len(self.schema.relations)

    @property
    def num_triples(self) -> int:
        return int(self.heads.shape[0])

    def triple_keys(self) -> np.ndarray:
        e, r = max(self.num_entities, 1), max(self.num_relations, 1)
        return (self.heads * r + self.rels) * e + self.tails

    def kind_of(self, entity: int) -> str:
        return self.schema.kinds[int(self.kinds[entity])]

    @cached_property
    def _entity_index(self) -> dict[tuple[str, str], int]:
        return {(self.schema.kinds[k], lab): i for i, (k, lab) in enumerate(zip(self.kinds.tolist(), self.labels))}

    @cached_property
    def _label_index(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return out

    def entity_id(self, label: str, kind: str | None = None) -> int:
        if kind is not None:
            try:
                return self._entity_index[(kind, label)]
            except KeyError:
                raise KeyError(f"no {kind} entity labelled {label!r}") from None
        ids = self._label_index.get(label, [])
        if len(ids) != 1:
            raise KeyError(f"label {label!r} matches {len(ids)} entities; pass kind")
        return ids[0]

    def has_entity(self, label: str, kind: str | None = None) -> bool:
        try:
            self.entity_id(label, kind)
            return True
        except KeyError:
            return False

    def relation_id(self, name: str) -> int:
        for i, r in enumerate(self.relations):
            if r.name == name:
                return i
        raise KeyError(f"unknown relation {name!r}")

    def inverse_of(self, rel: int) -> int:
        if not self.augmented:
            raise ValueError("graph has no inverse relations")
        n = self.num_forward_relations
        return rel + n if rel < n else rel - n

    def target_kind(self, rel: int) -> str:
        return self.relations[rel].tail_kind

    def entities_of_kind(self, kind: str) -> np.ndarray:
        return np.flatnonzero(self.kinds == self.schema.kinds.index(kind))

    def description(self, entity: int) -> str:
        """Description text, or the label when none is recorded."""
        return self.descriptions.get(self.labels[entity]) or self.labels[entity]

    # -- adjacency -------------------------------------------------------
    @cached_property
    def degree(self) -> np.ndarray:
        n = self.num_entities
        return np.bincount(self.heads, minlength=n) + np.bincount(self.tails, minlength=n)

    @cached_property
    def _out_order(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.heads, kind="stable")
        ptr = np.searchsorted(self.heads[order], np.arange(self.num_entities + 1))
        return order, ptr

    @cached_property
    def _in_order(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.tails, kind="stable")
        ptr = np.searchsorted(self.tails[order], np.arange(self.num_entities + 1))
        return order, ptr

    def out_edges(self, entity: int) -> list[tuple[int, int]]:
        """(relation, tail) pairs leaving ``entity``."""
        order, ptr = self._out_order
        idx = order[ptr[entity]:ptr[entity + 1]]
        return list(zip(self.rels[idx].tolist(), self.tails[idx].tolist()))

    def in_edges(self, entity: int) -> list[tuple[int, int]]:
        """(relation, head) pairs entering ``entity``."""
        order, ptr = self._in_order
        idx = order[ptr[entity]:ptr[entity + 1]]
        return list(zip(self.rels[idx].tolist(), self.heads[idx].tolist()))

    @cached_property
    def _hr_index(self) -> dict[tuple[int, int], set[int]]:
        out: dict[tuple[int, int], set[int]] = {}
        for h, r, t in zip(self.heads.tolist(), self.rels.tolist(), self.tails.tolist()):
            out.setdefault((h, r), set()).add(t)
        return out

    def tails_of(self, head: int, rel: int) -> set[int]:
        return self._hr_index.get((int(head), int(rel)), set())

    def has_triple(self, h: int, r: int, t: int) -> bool:
        return int(t) in self.tails_of(h, r)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        if not (self.schema == other.schema and self.labels == other.labels
                and np.array_equal(self.kinds, other.kinds) and self.relations == other.relations
                and self.augmented == other.augmented and self.num_triples == other.num_triples
                and dict(self.descriptions) == dict(other.descriptions)):
            return False
        # triple order is not part of the identity
        a, b = self.triple_keys(), other.triple_keys()
        ia, ib = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
        return bool(np.array_equal(a[ia], b[ib]) and np.array_equal(self.created[ia], other.created[ib]))

    __hash__ = None  # type: ignore[assignment]


def augment_inverses(g: KnowledgeGraph) -> KnowledgeGraph:
    """Add (t, r_inv, h) for every (h, r, t); the vocabulary doubles."""
    if g.augmented:
        raise ValueError("graph already has inverse relations")
    n = g.num_relations
    inv = tuple(RelationType(r.name + INVERSE_SUFFIX, r.tail_kind, r.head_kind, True) for r in g.relations)
    return KnowledgeGraph(
        g.schema, g.labels, g.kinds, g.relations + inv,
        np.concatenate([g.heads, g.tails]), np.concatenate([g.rels, g.rels + n]),
        np.concatenate([g.tails, g.heads]), np.concatenate([g.created, g.created]),
        g.descriptions, augmented=True)


def forward_only(g: KnowledgeGraph) -> KnowledgeGraph:
    """Strip inverse triples and relations from an augmented graph."""
    if not g.augmented:
        return g
    keep = g.rels < g.num_forward_relations
    return KnowledgeGraph(g.schema, g.labels, g.kinds, g.relations[: g.num_forward_relations],
                          g.heads[keep], g.rels[keep], g.tails[keep], g.created[keep], g.descriptions, False)
