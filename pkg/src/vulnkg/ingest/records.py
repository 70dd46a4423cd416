"""Parsed CVE and CWE records and the per-source record parsers."""
from __future__ import annotations

import csv
import io
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping

from .cpe import CpeError, cpe22_to_23, parse_cpe_uri, shorten_cpe

logger = logging.getLogger(__name__)

CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
CWE_TOKEN = re.compile(r"CWE-\d+")
CPE23_TOKEN = re.compile(r"cpe:2\.3:(?:\\.|[^\s\\])+")


class RecordError(ValueError):
    """A raw document could not be turned into a record."""


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    description: str
    cwe_ids: frozenset[str]
    cpe_uris: frozenset[str]
    published: datetime
    last_modified: datetime
    cpe_first_seen: Mapping[str, datetime] = field(default_factory=dict, compare=False)
    source: str = "nvd"

    def __post_init__(self):
        if not CVE_RE.match(self.cve_id):
            raise RecordError(f"bad CVE id {self.cve_id!r}")
        if self.published > self.last_modified:
            raise RecordError(f"{self.cve_id}: published after last modification")

    @property
    def short_cpes(self) -> frozenset[str]:
        return frozenset(shorten_cpe(parse_cpe_uri(u)) for u in self.cpe_uris)


@dataclass(frozen=True)
class CweRecord:
    cwe_id: str
    name: str = ""
    description: str = ""
    child_of: frozenset[str] = frozenset()
    peer_of: frozenset[str] = frozenset()
    can_precede: frozenset[str] = frozenset()
    member_of: frozenset[str] = frozenset()
    languages: frozenset[str] = frozenset()
    technologies: frozenset[str] = frozenset()
    consequences: frozenset[str] = frozenset()
    exploitation_likelihood: str | None = None
    is_category: bool = False

    def __post_init__(self):
        for rel in ("child_of", "peer_of", "can_precede", "member_of"):
            if self.cwe_id in getattr(self, rel):
                raise RecordError(f"{self.cwe_id} relates to itself via {rel}")

    @property
    def text(self) -> str:
        if self.name and self.description:
            return f"{self.cwe_id}: {self.name}. {self.description}"
        return self.description or self.name or self.cwe_id


def parse_timestamp(value: str) -> datetime:
    """NVD/Red Hat timestamps, with or without zone, as aware UTC datetimes."""
    s = value.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(s)
    except ValueError as exc:
        raise RecordError(f"unparseable timestamp {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


# -- NVD ---------------------------------------------------------------------

def _nvd_cpes(cve: dict) -> set[str]:
    uris = set()
    for conf in cve.get("configurations", []) or []:
        stack = list(conf.get("nodes", []) or [])
        while stack:
            node = stack.pop()
            stack.extend(node.get("children", []) or [])
            for match in node.get("cpeMatch", []) or []:
                if match.get("vulnerable", True) and "criteria" in match:
                    uris.add(match["criteria"])
    return uris


def _valid_cpes(uris: Iterable[str], cve_id: str) -> set[str]:
    out = set()
    for u in uris:
        try:
            parse_cpe_uri(u)
        except CpeError:
            logger.warning("%s: dropping malformed CPE %r", cve_id, u)
            continue
        out.add(u)
    return out


def parse_change_history(changes: Iterable[dict]) -> dict[str, dict[str, datetime]]:
    """First time each shortened CPE appears in NVD change-history events.

    ``changes`` are the ``cveChanges`` items of the NVD CVE Change History API.
    Returns ``{cve_id: {short_cpe: first_seen}}``.
    """
    out: dict[str, dict[str, datetime]] = {}
    for item in changes:
        ch = item.get("change", item)
        cve_id, created = ch.get("cveId"), ch.get("created")
        if not cve_id or not created:
            continue
        when = parse_timestamp(created)
        seen = out.setdefault(cve_id, {})
        for det in ch.get("details", []) or []:
            if det.get("action") not in ("Added", "Changed") or "CPE" not in det.get("type", ""):
                continue
            for tok in CPE23_TOKEN.findall(det.get("newValue", "") or ""):
                try:
                    short = shorten_cpe(parse_cpe_uri(tok))
                except CpeError:
                    continue
                if short not in seen or when < seen[short]:
                    seen[short] = when
    return out


def _first_seen(cpes: set[str], published: datetime, history: Mapping[str, datetime] | None):
    first = {}
    for u in cpes:
        short = shorten_cpe(parse_cpe_uri(u))
        when = (history or {}).get(short, published)
        when = max(when, published)
        if short not in first or when < first[short]:
            first[short] = when
    return first


def _parse_nvd(raw: dict, history: Mapping[str, datetime] | None) -> CveRecord:
    cve = raw.get("cve", raw)
    cve_id = cve.get("id")
    if not cve_id:
        raise RecordError("NVD document without a CVE id")
    if not cve.get("published"):
        raise RecordError(f"{cve_id}: undated record")
    published = parse_timestamp(cve["published"])
    last_modified = parse_timestamp(cve.get("lastModified") or cve["published"])
    desc = next((d.get("value", "") for d in cve.get("descriptions", []) if d.get("lang") == "en"), "")
    cwes = set()
    for w in cve.get("weaknesses", []) or []:
        for d in w.get("description", []) or []:
            # NVD-CWE-Other / NVD-CWE-noinfo are placeholders, not weaknesses
            cwes.update(t for t in CWE_TOKEN.findall(d.get("value", "")) if t == d.get("value", "").strip())
    cpes = _valid_cpes(_nvd_cpes(cve), cve_id)
    return CveRecord(cve_id, desc, frozenset(cwes), frozenset(cpes), published,
                     max(last_modified, published), _first_seen(cpes, published, history), "nvd")


# -- Red Hat -----------------------------------------------------------------

def _parse_redhat(raw: dict, history: Mapping[str, datetime] | None) -> CveRecord:
    cve_id = raw.get("name") or raw.get("CVE")
    if not cve_id:
        raise RecordError("Red Hat document without a CVE id")
    date = raw.get("public_date")
    if not date:
        raise RecordError(f"{cve_id}: undated record")
    published = parse_timestamp(date)
    details = raw.get("details")
    if isinstance(details, list) and details:
        desc = " ".join(d.strip() for d in details if d)
    else:
        bz = raw.get("bugzilla")
        desc = raw.get("bugzilla_description") or (bz.get("description", "") if isinstance(bz, dict) else "")
    cwe_field = raw.get("cwe") or raw.get("CWE") or ""
    cwes = set(CWE_TOKEN.findall(cwe_field))
    uris = set()
    for key in ("affected_release", "package_state"):
        for item in raw.get(key) or []:
            cpe = item.get("cpe")
            if not cpe:
                continue
            if key == "package_state" and item.get("fix_state") == "Not affected":
                continue
            try:
                uris.add(cpe22_to_23(cpe))
            except CpeError:
                logger.warning("%s: dropping malformed CPE %r", cve_id, cpe)
    cpes = _valid_cpes(uris, cve_id)
    return CveRecord(cve_id, desc, frozenset(cwes), frozenset(cpes), published, published,
                     _first_seen(cpes, published, history), "redhat")


def parse_cve_record(raw: dict, source: str, history: Mapping[str, datetime] | None = None) -> CveRecord:
    """Turn one raw NVD vulnerability item or Red Hat CVE document into a record.

    ``history`` maps shortened CPEs to their first-seen time for this CVE
    (see :func:`parse_change_history`); without it every CPE is dated at
    publication.
    """
    if source == "nvd":
        return _parse_nvd(raw, history)
    if source == "redhat":
        return _parse_redhat(raw, history)
    raise ValueError(f"unknown CVE source {source!r}")


# -- MITRE CWE catalog -------------------------------------------------------

_NATURES = {"ChildOf": "child_of", "PeerOf": "peer_of", "CanPrecede": "can_precede", "MemberOf": "member_of"}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text(el) -> str:
    return " ".join("".join(el.itertext()).split()) if el is not None else ""


def _find(el, name):
    for child in el.iter():
        if _local(child.tag) == name:
            return child
    return None


def _findall(el, name):
    return [c for c in el.iter() if _local(c.tag) == name]


def _parse_cwe_xml(raw: bytes | str) -> list[CweRecord]:
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise RecordError(f"unparseable CWE catalog: {exc}") from exc
    if _local(root.tag) != "Weakness_Catalog":
        raise RecordError(f"not a CWE catalog (root {_local(root.tag)!r})")

    rels: dict[str, dict[str, set]] = {}
    entries = []
    for el in root.iter():
        kind = _local(el.tag)
        if kind not in ("Weakness", "Category") or el.get("ID") is None:
            continue
        cid = f"CWE-{el.get('ID')}"
        r = rels.setdefault(cid, {v: set() for v in _NATURES.values()})
        for rw in _findall(el, "Related_Weakness"):
            nature = _NATURES.get(rw.get("Nature", ""))
            if nature and rw.get("CWE_ID"):
                r[nature].add(f"CWE-{rw.get('CWE_ID')}")
        if kind == "Category":
            for mem in _findall(el, "Has_Member"):
                if mem.get("CWE_ID"):
                    target = f"CWE-{mem.get('CWE_ID')}"
                    rels.setdefault(target, {v: set() for v in _NATURES.values()})["member_of"].add(cid)
        entries.append((cid, kind, el))

    out = []
    for cid, kind, el in entries:
        langs, techs, cons = set(), set(), set()
        for lang in _findall(el, "Language"):
            v = lang.get("Name") or lang.get("Class")
            if v:
                langs.add(v)
        for tech in _findall(el, "Technology"):
            v = tech.get("Name") or tech.get("Class")
            if v:
                techs.add(v)
        for con in _findall(el, "Consequence"):
            for imp in _findall(con, "Impact"):
                if imp.text and imp.text.strip():
                    cons.add(imp.text.strip())
        lik = _find(el, "Likelihood_Of_Exploit")
        r = {k: frozenset(v - {cid}) for k, v in rels[cid].items()}
        out.append(CweRecord(
            cid, el.get("Name", ""), _text(_find(el, "Description") if kind == "Weakness" else _find(el, "Summary")),
            languages=frozenset(langs), technologies=frozenset(techs), consequences=frozenset(cons),
            exploitation_likelihood=(lik.text.strip() if lik is not None and lik.text else None),
            is_category=(kind == "Category"), **r))
    return out


def _csv_groups(field_value: str) -> list[dict[str, str]]:
    groups = []
    for chunk in (field_value or "").split("::"):
        if not chunk.strip():
            continue
        toks = chunk.split(":")
        groups.append({toks[i].strip(): toks[i + 1].strip() for i in range(0, len(toks) - 1, 2)})
    return groups


def _parse_cwe_csv(raw: bytes | str) -> list[CweRecord]:
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or "CWE-ID" not in reader.fieldnames:
        raise RecordError("CWE CSV without a CWE-ID column")
    out = []
    for row in reader:
        cid = f"CWE-{row['CWE-ID'].strip()}"
        r = {v: set() for v in _NATURES.values()}
        for g in _csv_groups(row.get("Related Weaknesses", "")):
            nature = _NATURES.get(g.get("NATURE", ""))
            if nature and g.get("CWE ID"):
                r[nature].add(f"CWE-{g['CWE ID']}")
        langs, techs = set(), set()
        for g in _csv_groups(row.get("Applicable Platforms", "")):
            if "LANGUAGE NAME" in g or "LANGUAGE CLASS" in g:
                langs.add(g.get("LANGUAGE NAME") or g.get("LANGUAGE CLASS"))
            if "TECHNOLOGY NAME" in g or "TECHNOLOGY CLASS" in g:
                techs.add(g.get("TECHNOLOGY NAME") or g.get("TECHNOLOGY CLASS"))
        cons = {g["IMPACT"] for g in _csv_groups(row.get("Common Consequences", "")) if g.get("IMPACT")}
        lik = (row.get("Likelihood of Exploit") or "").strip() or None
        out.append(CweRecord(cid, row.get("Name", ""), row.get("Description", "").strip(),
                             languages=frozenset(langs), technologies=frozenset(techs),
                             consequences=frozenset(cons), exploitation_likelihood=lik,
                             **{k: frozenset(v - {cid}) for k, v in r.items()}))
    return out


def parse_cwe_catalog(raw: bytes | str, stats: dict | None = None) -> list[CweRecord]:
    """Parse a MITRE CWE catalog (XML, or the CSV export) into records.

    Hierarchy references to ids missing from the catalog are dropped; the
    count is logged and stored under ``stats["dropped_refs"]`` when given.
    """
    head = raw[:200].lstrip() if isinstance(raw, (bytes, str)) else b""
    is_xml = head.startswith(b"<" if isinstance(head, bytes) else "<")
    records = _parse_cwe_xml(raw) if is_xml else _parse_cwe_csv(raw)
    known = {r.cwe_id for r in records}
    dropped = 0
    cleaned = []
    for rec in records:
        kept = {}
        for rel in _NATURES.values():
            vals = getattr(rec, rel)
            kept[rel] = frozenset(v for v in vals if v in known)
            dropped += len(vals) - len(kept[rel])
        cleaned.append(CweRecord(**{**rec.__dict__, **kept}))
    if dropped:
        logger.warning("dropped %d CWE hierarchy references to unknown ids", dropped)
    if stats is not None:
        stats["dropped_refs"] = dropped
    return cleaned
