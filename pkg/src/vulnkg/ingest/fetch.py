"""Raw document retrieval from NVD, Red Hat and MITRE, live or from fixtures.

A fixture directory holds the verbatim response bodies plus ``manifest.json``
listing them in order. Live fetches write the same layout, so any live run
can be replayed offline by pointing ``location`` at its cache directory.
"""
from __future__ import annotations

import io
import json
import logging
import os
import time
import zipfile
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable

import requests

logger = logging.getLogger(__name__)

NVD_CVE_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"
NVD_HISTORY_URL = "https://services.nvd.nist.gov/rest/json/cvehistory/2.0"
REDHAT_URL = "https://access.redhat.com/hydra/rest/securitydata/cve.json"
CWE_URL = "https://cwe.mitre.org/data/xml/cwec_latest.xml.zip"
NVD_API_KEY_ENV = "NVD_API_KEY"

SOURCES = ("nvd", "redhat", "mitre_cwe")
MANIFEST = "manifest.json"
NVD_PAGE_SIZE = 2000
NVD_WINDOW_DAYS = 120


class FetchError(RuntimeError):
    pass


# -- fixture / cache layout --------------------------------------------------

def read_manifest(directory: Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FetchError(f"no {MANIFEST} in {directory}")
    return json.loads(path.read_text())


class RawCache:
    """Append-only store of verbatim payloads; one writer at a time."""

    def __init__(self, directory: Path, source: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        mpath = self.dir / MANIFEST
        self.manifest = json.loads(mpath.read_text()) if mpath.exists() else {"source": source, "files": []}
        self.manifest.setdefault("history_files", [])

    def put(self, body: bytes, suffix: str = ".json", key: str = "files") -> str:
        name = f"{key[:-6] or 'doc'}-{len(self.manifest[key]):05d}{suffix}"
        (self.dir / name).write_bytes(body)
        self.manifest[key].append(name)
        self._flush()
        return name

    def set_cursor(self, cursor: dict | None) -> None:
        self.manifest["cursor"] = cursor
        self._flush()

    @property
    def cursor(self) -> dict | None:
        return self.manifest.get("cursor")

    def _flush(self) -> None:
        tmp = self.dir / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=1, sort_keys=True))
        tmp.replace(self.dir / MANIFEST)


def _load_offline(source: str, location: Path, key: str = "files") -> list[Any]:
    location = Path(location)
    if not location.exists():
        raise FetchError(f"fixture location {location} does not exist")
    if source == "mitre_cwe" and location.is_file():
        return [_read_catalog_file(location)]
    man = read_manifest(location)
    docs: list[Any] = []
    for name in man.get(key, []):
        path = location / name
        if source == "mitre_cwe":
            docs.append(_read_catalog_file(path))
            continue
        try:
            body = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FetchError(f"malformed page {path}: {exc}") from exc
        docs.extend(_unpack(source, body, key))
    return docs


def _read_catalog_file(path: Path) -> bytes:
    data = Path(path).read_bytes()
    if zipfile.is_zipfile(io.BytesIO(data)):
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            name = next(n for n in zf.namelist() if n.endswith((".xml", ".csv")))
            return zf.read(name)
    return data


def _unpack(source: str, body: Any, key: str) -> list[Any]:
    if source == "nvd":
        if not isinstance(body, dict):
            raise FetchError("malformed NVD page")
        if key == "history_files":
            return list(body.get("cveChanges", []))
        if "vulnerabilities" not in body:
            raise FetchError("NVD page without 'vulnerabilities'")
        return list(body["vulnerabilities"])
    if source == "redhat":
        return list(body) if isinstance(body, list) else [body]
    raise FetchError(f"unknown source {source!r}")


# -- live HTTP ---------------------------------------------------------------

class HttpClient:
    """GET with retry, exponential backoff and rate-limit handling."""

    def __init__(self, session=None, retries: int = 3, backoff: float = 2.0,
                 delay: float = 0.0, sleep: Callable[[float], None] = time.sleep, timeout: float = 60.0):
        self.session = session or requests.Session()
        self.retries = retries
        self.backoff = backoff
        self.delay = delay
        self.sleep = sleep
        self.timeout = timeout

    def get(self, url: str, params: dict | None = None, headers: dict | None = None) -> bytes:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if self.delay:
                self.sleep(self.delay)
            try:
                resp = self.session.get(url, params=params, headers=headers or {}, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code in (403, 429, 503):
                    wait = resp.headers.get("Retry-After")
                    last = FetchError(f"{url}: HTTP {resp.status_code}")
                    if attempt < self.retries:
                        self.sleep(float(wait) if wait and wait.isdigit() else self.backoff ** (attempt + 1))
                    continue
                if resp.status_code >= 400:
                    last = FetchError(f"{url}: HTTP {resp.status_code}")
                else:
                    return resp.content
            if attempt < self.retries:
                self.sleep(self.backoff ** (attempt + 1))
        raise FetchError(f"giving up on {url} after {self.retries + 1} attempts: {last}")

    def get_json(self, url: str, params: dict | None = None, headers: dict | None = None):
        body = self.get(url, params, headers)
        try:
            return body, json.loads(body)
        except json.JSONDecodeError as exc:
            raise FetchError(f"malformed page from {url}") from exc


def _nvd_windows(since: date | None):
    if since is None:
        yield None
        return
    start = datetime(since.year, since.month, since.day, tzinfo=timezone.utc)
    now = datetime.now(timezone.utc)
    while start < now:
        end = min(start + timedelta(days=NVD_WINDOW_DAYS), now)
        yield start, end
        start = end


def _fmt(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%S.000+00:00")


def _fetch_nvd_paged(client: HttpClient, cache: RawCache, url: str, items_key: str, window_keys,
                     since: date | None, key: str) -> list[dict]:
    headers = {"apiKey": os.environ[NVD_API_KEY_ENV]} if os.environ.get(NVD_API_KEY_ENV) else {}
    cursor = cache.cursor if cache.cursor and cache.cursor.get("key") == key else None
    docs: list[dict] = []
    for window in _nvd_windows(since):
        wtag = None if window is None else _fmt(window[0])
        if cursor and cursor.get("window") not in (None, wtag) and window is not None and wtag < cursor["window"]:
            continue
        start = cursor["start_index"] if cursor and cursor.get("window") == wtag else 0
        while True:
            params = {"resultsPerPage": NVD_PAGE_SIZE, "startIndex": start}
            if window is not None:
                params[window_keys[0]], params[window_keys[1]] = _fmt(window[0]), _fmt(window[1])
            raw, page = client.get_json(url, params, headers)
            if items_key not in page:
                raise FetchError(f"malformed NVD page at startIndex={start}")
            cache.put(raw, key=key)
            items = page[items_key]
            docs.extend(items)
            start += len(items)
            cache.set_cursor({"key": key, "window": wtag, "start_index": start})
            if not items or start >= int(page.get("totalResults", 0)):
                break
        cursor = None
    cache.set_cursor(None)
    return docs


def _fetch_redhat(client: HttpClient, cache: RawCache, since: date | None) -> list[dict]:
    docs, page_no = [], 1
    while True:
        params = {"per_page": 1000, "page": page_no}
        if since is not None:
            params["after"] = since.isoformat()
        _, listing = client.get_json(REDHAT_URL, params)
        if not isinstance(listing, list):
            raise FetchError("malformed Red Hat listing page")
        if not listing:
            break
        for item in listing:
            url = item.get("resource_url")
            if not url:
                continue
            raw, detail = client.get_json(url)
            cache.put(raw)
            docs.append(detail)
        page_no += 1
    return docs


def fetch_records(source: str, since: date | None = None, mode: str = "offline",
                  location: str | Path = ".", client: HttpClient | None = None) -> list[Any]:
    """Return every raw document of ``source``.

    Offline, ``location`` is a fixture directory (or, for ``mitre_cwe``, a
    catalog file). Live, it is the cache directory that receives the verbatim
    payloads and the paging cursor.
    """
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}; expected one of {SOURCES}")
    if mode == "offline":
        docs = _load_offline(source, Path(location))
        if since is not None and source != "mitre_cwe":
            docs = [d for d in docs if _modified(source, d) >= since]
        return docs
    if mode != "live":
        raise ValueError(f"unknown mode {mode!r}")
    cache = RawCache(Path(location), source)
    if source == "nvd":
        has_key = bool(os.environ.get(NVD_API_KEY_ENV))
        client = client or HttpClient(delay=0.6 if has_key else 6.0)
        return _fetch_nvd_paged(client, cache, NVD_CVE_URL, "vulnerabilities",
                                ("lastModStartDate", "lastModEndDate"), since, "files")
    client = client or HttpClient()
    if source == "redhat":
        return _fetch_redhat(client, cache, since)
    body = client.get(CWE_URL)
    cache.put(body, suffix=".zip" if body[:2] == b"PK" else ".xml")
    return [_read_catalog_file(cache.dir / cache.manifest["files"][-1])]


def fetch_change_history(since: date | None = None, mode: str = "offline", location: str | Path = ".",
                         client: HttpClient | None = None) -> list[dict]:
    """NVD CVE change-history events (``cveChanges`` items)."""
    if mode == "offline":
        location = Path(location)
        if not (location / MANIFEST).exists():
            raise FetchError(f"no {MANIFEST} in {location}")
        return _load_offline("nvd", location, key="history_files")
    cache = RawCache(Path(location), "nvd")
    client = client or HttpClient(delay=0.6 if os.environ.get(NVD_API_KEY_ENV) else 6.0)
    return _fetch_nvd_paged(client, cache, NVD_HISTORY_URL, "cveChanges",
                            ("changeStartDate", "changeEndDate"), since, "history_files")


def _modified(source: str, doc: dict) -> date:
    if source == "nvd":
        cve = doc.get("cve", doc)
        stamp = cve.get("lastModified") or cve.get("published", "1970-01-01")
    else:
        stamp = doc.get("public_date", "1970-01-01")
    return date.fromisoformat(stamp[:10])
