"""Vulnerability graph construction from parsed CVE and CWE records."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Sequence

from ..ingest.cpe import PARTS, parse_cpe_uri, shorten_cpe
from ..ingest.records import CveRecord, CweRecord
from .graph import VULN_SCHEMA, KnowledgeGraph

logger = logging.getLogger(__name__)

# catalog edges must precede any temporal cutoff, so they carry a fixed early date
CATALOG_EPOCH = dt.date(2006, 1, 1)

_HIERARCHY = (("child_of", "childOf"), ("peer_of", "peerOf"), ("can_precede", "canPreceed"),
              ("member_of", "memberOf"))


@dataclass
class BuildReport:
    cves_in: int = 0
    cves_kept: int = 0
    cves_filtered: int = 0
    unknown_cwe_refs: int = 0
    unknown_cwes: set = field(default_factory=set)


def build_graph(cves: Sequence[CveRecord], cwes: Sequence[CweRecord], cwe_scope: str = "referenced",
                catalog_date: dt.date = CATALOG_EPOCH, report: BuildReport | None = None) -> KnowledgeGraph:
    """Materialize the twelve-relation vulnerability graph.

    CVEs left without any CWE or CPE link are excluded. ``cwe_scope`` chooses
    which catalog weaknesses become nodes: ``"referenced"`` keeps those matched
    by a kept CVE, ``"catalog"`` keeps all of them. CWE references absent from
    the catalog are dropped and counted in ``report``.
    """
    if not cves and not cwes:
        raise ValueError("build_graph needs at least one record")
    if cwe_scope not in ("referenced", "catalog"):
        raise ValueError(f"unknown cwe_scope {cwe_scope!r}")
    report = report if report is not None else BuildReport()
    catalog = {c.cwe_id: c for c in cwes}

    entities: list[tuple[str, str]] = []
    index: dict[tuple[str, str], int] = {}
    descriptions: dict[str, str] = {}
    triples: list[tuple[int, str, int, dt.date]] = []

    def ent(kind: str, label: str) -> int:
        key = (kind, label)
        if key not in index:
            index[key] = len(entities)
            entities.append(key)
        return index[key]

    cpe_first: dict[str, dt.date] = {}
    cpe_part: dict[str, str] = {}
    used_cwes: set[str] = set()
    for rec in sorted(cves, key=lambda r: r.cve_id):
        report.cves_in += 1
        known = sorted(c for c in rec.cwe_ids if c in catalog)
        unknown = rec.cwe_ids - set(known)
        report.unknown_cwe_refs += len(unknown)
        report.unknown_cwes |= unknown
        shorts: dict[str, str] = {}
        for uri in rec.cpe_uris:
            name = parse_cpe_uri(uri)
            shorts[shorten_cpe(name)] = name.part
        if not known and not shorts:
            report.cves_filtered += 1
            continue
        report.cves_kept += 1
        pub = rec.published.date()
        cve = ent("CVE", rec.cve_id)
        if rec.description:
            descriptions[rec.cve_id] = rec.description
        for cwe_id in known:
            used_cwes.add(cwe_id)
            triples.append((cve, "matchingCWE", ent("CWE", cwe_id), pub))
        for short, part in sorted(shorts.items()):
            seen = rec.cpe_first_seen.get(short)
            when = max(pub, seen.date()) if seen is not None else pub
            triples.append((ent("CPE", short), "matchingCVE", cve, when))
            cpe_part[short] = part
            cpe_first[short] = min(when, cpe_first.get(short, when))

    for short in sorted(cpe_first):
        name = parse_cpe_uri(short, pad=True)
        cpe = ent("CPE", short)
        triples.append((cpe, "hasVendor", ent("Vendor", name.vendor), cpe_first[short]))
        triples.append((cpe, "hasComponent", ent("Component", PARTS[cpe_part[short]]), cpe_first[short]))

    included = set(catalog) if cwe_scope == "catalog" else used_cwes
    for cwe_id in sorted(included):
        rec = catalog[cwe_id]
        cid = ent("CWE", cwe_id)
        descriptions[cwe_id] = rec.text
        for attr, rel in _HIERARCHY:
            for other in sorted(getattr(rec, attr)):
                if other in included:
                    triples.append((cid, rel, ent("CWE", other), catalog_date))
        for lang in sorted(rec.languages):
            triples.append((cid, "hasLanguage", ent("Language", lang), catalog_date))
        for tech in sorted(rec.technologies):
            triples.append((cid, "hasTechnology", ent("Technology", tech), catalog_date))
        for con in sorted(rec.consequences):
            triples.append((cid, "hasConsequence", ent("Consequence", con), catalog_date))
        if rec.exploitation_likelihood:
            triples.append((cid, "hasExploitationLikelihood",
                            ent("ExploitationLikelihood", rec.exploitation_likelihood), catalog_date))

    if report.unknown_cwe_refs:
        logger.warning("dropped %d CVE->CWE links to CWEs missing from the catalog", report.unknown_cwe_refs)
    if not triples:
        raise ValueError("no triples survived graph construction")
    return KnowledgeGraph.from_triples(VULN_SCHEMA, entities, triples, descriptions)
