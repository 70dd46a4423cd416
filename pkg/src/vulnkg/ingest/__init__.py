"""CVE / CWE / CPE source ingestion."""
from __future__ import annotations

import logging
from datetime import date
from pathlib import Path

from .cpe import CpeError, CpeName, cpe22_to_23, format_cpe, parse_cpe_uri, shorten_cpe
from .fetch import FetchError, HttpClient, fetch_change_history, fetch_records
from .records import (CveRecord, CweRecord, RecordError, parse_change_history, parse_cve_record,
                      parse_cwe_catalog, parse_timestamp)

logger = logging.getLogger(__name__)

__all__ = [
    "CpeError", "CpeName", "CveRecord", "CweRecord", "FetchError", "HttpClient", "RecordError",
    "cpe22_to_23", "fetch_change_history", "fetch_records", "format_cpe", "load_cves", "load_cwes",
    "parse_change_history", "parse_cpe_uri", "parse_cve_record", "parse_cwe_catalog",
    "parse_timestamp", "shorten_cpe",
]


def load_cves(source: str, location: str | Path, mode: str = "offline", since: date | None = None,
              with_history: bool = True) -> list[CveRecord]:
    """Fetch and parse every CVE of one source, sorted by id.

    For NVD, change-history events (when the fixture or cache has them) date
    the first appearance of each CPE.
    """
    raw = fetch_records(source, since=since, mode=mode, location=location)
    history: dict = {}
    if source == "nvd" and with_history:
        try:
            history = parse_change_history(fetch_change_history(since=since, mode=mode, location=location))
        except FetchError as exc:
            logger.info("no change history available: %s", exc)
    out, skipped = {}, 0
    for doc in raw:
        try:
            cve_id = (doc.get("cve", doc).get("id") if source == "nvd" else doc.get("name") or doc.get("CVE"))
            rec = parse_cve_record(doc, source, history.get(cve_id))
        except RecordError as exc:
            skipped += 1
            logger.warning("skipping record: %s", exc)
            continue
        out[rec.cve_id] = rec
    if skipped:
        logger.warning("%d %s documents could not be parsed", skipped, source)
    return [out[k] for k in sorted(out)]


def load_cwes(location: str | Path, mode: str = "offline") -> list[CweRecord]:
    docs = fetch_records("mitre_cwe", mode=mode, location=location)
    return parse_cwe_catalog(docs[0])
