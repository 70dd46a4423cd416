"""Descriptive statistics and the CPE-delay / missing-CWE analyses."""
from __future__ import annotations

from collections import Counter, defaultdict
from datetime import timedelta
from typing import Sequence

from ..ingest.records import CveRecord
from .graph import KnowledgeGraph

DEFAULT_WINDOWS = (1, 7, 30, 180)


def graph_stats(g: KnowledgeGraph) -> dict:
    """Entity counts per kind, triple counts per relation, triples per year."""
    kinds = Counter(g.schema.kinds[k] for k in g.kinds.tolist())
    rels = Counter(g.relations[r].name for r in g.rels.tolist())
    years = Counter(int(str(d)[:4]) for d in g.created.astype(str).tolist())
    return {
        "entities": {k: kinds.get(k, 0) for k in g.schema.kinds},
        "relations": {r.name: rels.get(r.name, 0) for r in g.relations},
        "triples_per_year": dict(sorted(years.items())),
        "num_entities": g.num_entities,
        "num_relation_types": len({g.relations[r].name for r in g.rels.tolist()}),
        "num_triples": g.num_triples,
    }


def cpe_delay_report(cves: Sequence[CveRecord], windows: Sequence[int] = DEFAULT_WINDOWS) -> dict[int, dict]:
    """Per publication year: CVE count and the percentage of CVEs that had some
    CPE first appear more than ``w`` days after publication, for each window."""
    windows = sorted(int(w) for w in windows)
    total: Counter = Counter()
    late: dict[int, Counter] = defaultdict(Counter)
    for rec in cves:
        year = rec.published.year
        total[year] += 1
        if not rec.cpe_first_seen:
            continue
        worst = max(seen - rec.published for seen in rec.cpe_first_seen.values())
        for w in windows:
            if worst > timedelta(days=w):
                late[year][w] += 1
    return {year: {"total": n, **{w: 100.0 * late[year][w] / n for w in windows}}
            for year, n in sorted(total.items())}


def missing_cwe_report(pre_filter_cves: Sequence[CveRecord], g: KnowledgeGraph | None = None) -> float:
    """Fraction of the unfiltered CVE population without any CWE.

    When ``g`` is given, a CWE only counts if it is a CWE entity of that graph.
    """
    if not pre_filter_cves:
        return 0.0
    known = None
    if g is not None:
        known = {g.labels[i] for i in g.entities_of_kind("CWE").tolist()}
    missing = 0
    for rec in pre_filter_cves:
        ids = rec.cwe_ids if known is None else rec.cwe_ids & known
        missing += not ids
    return missing / len(pre_filter_cves)
