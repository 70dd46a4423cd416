"""On-disk graph format: ``entities.tsv``, ``triples.tsv``, ``descriptions.tsv``
and a JSON ``manifest`` with counts and a SHA-256 checksum."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .graph import INVERSE_SUFFIX, SCHEMAS, KnowledgeGraph, augment_inverses

FORMAT_VERSION = "1"
_FILES = ("entities.tsv", "triples.tsv", "descriptions.tsv")


class GraphFormatError(ValueError):
    pass


def _esc(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unesc(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(s[i + 1], s[i + 1]))
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def checksum_files(directory: Path) -> str:
    h = hashlib.sha256()
    for name in _FILES:
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()


def graph_checksum(g: KnowledgeGraph) -> str:
    """Content hash of a graph, equal to the manifest checksum after saving."""
    h = hashlib.sha256()
    for name, body in zip(_FILES, _render(g)):
        h.update(name.encode())
        h.update(body)
    return h.hexdigest()


def _render(g: KnowledgeGraph) -> tuple[bytes, bytes, bytes]:
    kinds = g.schema.kinds
    ents = "".join(f"{i}\t{kinds[k]}\t{_esc(lab)}\t{_esc(lab)}\n"
                   for i, (k, lab) in enumerate(zip(g.kinds.tolist(), g.labels)))
    names = [r.name for r in g.relations]
    trip = "".join(f"{h}\t{names[r]}\t{t}\t{c}\n" for h, r, t, c in
                   zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist(), g.created.astype(str).tolist()))
    desc = "".join(f"{_esc(k)}\t{_esc(v)}\n" for k, v in sorted(g.descriptions.items()))
    return ents.encode(), trip.encode(), desc.encode()


def save_graph(g: KnowledgeGraph, path: str | Path) -> str:
    """Write the graph directory; returns the checksum recorded in the manifest."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for name, body in zip(_FILES, _render(g)):
        (out / name).write_bytes(body)
    digest = checksum_files(out)
    manifest = {"format_version": FORMAT_VERSION, "schema": g.schema.name, "augmented": g.augmented,
                "counts": {"entities": g.num_entities, "relations": g.num_relations, "triples": g.num_triples,
                           "descriptions": len(g.descriptions)},
                "checksum": digest}
    (out / "manifest").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return digest


def read_manifest(path: str | Path) -> dict:
    mpath = Path(path) / "manifest"
    if not mpath.exists():
        raise GraphFormatError(f"no manifest in {path}")
    return json.loads(mpath.read_text())


def load_graph(path: str | Path) -> KnowledgeGraph:
    src = Path(path)
    man = read_manifest(src)
    if man.get("format_version") != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported graph format version {man.get('format_version')!r}")
    if checksum_files(src) != man.get("checksum"):
        raise GraphFormatError(f"checksum mismatch in {src}; files are corrupt or truncated")
    schema = SCHEMAS.get(man["schema"])
    if schema is None:
        raise GraphFormatError(f"unknown schema {man['schema']!r}")
    entities = []
    for n, line in enumerate((src / "entities.tsv").read_text().splitlines()):
        i, kind, label, _key = line.split("\t")
        if int(i) != n:
            raise GraphFormatError("entity ids are not dense and ordered")
        entities.append((kind, _unesc(label)))
    descriptions = {}
    for line in (src / "descriptions.tsv").read_text().splitlines():
        k, v = line.split("\t", 1)
        descriptions[_unesc(k)] = _unesc(v)
    triples = []
    for line in (src / "triples.tsv").read_text().splitlines():
        h, r, t, c = line.split("\t")
        if r.endswith(INVERSE_SUFFIX):
            continue
        triples.append((int(h), r, int(t), c))
    g = KnowledgeGraph.from_triples(schema, entities, triples, descriptions)
    if man.get("augmented"):
        g = augment_inverses(g)
    counts = man.get("counts", {})
    if counts.get("triples") != g.num_triples or counts.get("entities") != g.num_entities:
        raise GraphFormatError("manifest counts disagree with file contents")
    return g
