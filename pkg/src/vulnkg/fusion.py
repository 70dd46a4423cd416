"""Text embeddings for entities and their fusion with relational features.

Every entity gets a text vector (description, or label when there is none)
from either a remote OpenAI-compatible ``/embeddings`` endpoint or a local
hashing embedder. The vector is concatenated with a per-entity relational
feature and passed through a two-layer MLP; the result is added to the
entity-level GNN's initial states.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import requests
import scipy.sparse as sp

from . import numcore as nc
from .kgstore.graph import KnowledgeGraph

logger = logging.getLogger(__name__)

TEXT_DIM = 1536
CACHE_VERSION = "1"
TOKEN_ENV = "VULNKG_EMBEDDING_TOKEN"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/embeddings"
DEFAULT_MODEL = "text-embedding-ada-002"
MAX_BATCH = 256


class EmbeddingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TextEmbedding:
    key: str
    vector: np.ndarray
    provider: str

    def __post_init__(self):
        if self.provider not in ("remote", "local-fallback"):
            raise ValueError(f"unknown provider tag {self.provider!r}")


def content_key(text: str, provider: str, dim: int) -> str:
    return hashlib.sha256(f"{provider}\x00{dim}\x00{text}".encode()).hexdigest()


# -- providers -----------------------------------------------------------------

class LocalHashEmbedder:
    """Signed hashing of character 3-5 grams into ``dim`` buckets, L2-normalized."""

    tag = "local-fallback"

    def __init__(self, dim: int = TEXT_DIM, ngram: tuple[int, int] = (3, 5)):
        self.dim = dim
        self.ngram = ngram
        self.calls = 0

    def _one(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmbeddingError("cannot embed empty text")
        s = f" {' '.join(text.lower().split())} "
        vec = np.zeros(self.dim)
        for n in range(self.ngram[0], self.ngram[1] + 1):
            for i in range(len(s) - n + 1):
                h = int.from_bytes(hashlib.blake2b(s[i:i + n].encode(), digest_size=8).digest(), "little")
                vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm == 0:
            # every n-gram cancelled; fall back to a fixed bucket for the whole string
            h = int.from_bytes(hashlib.blake2b(s.encode(), digest_size=8).digest(), "little")
            vec[h % self.dim] = 1.0
            norm = 1.0
        return vec / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        return np.stack([self._one(t) for t in texts]) if texts else np.zeros((0, self.dim))


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    The bearer token is read from ``$VULNKG_EMBEDDING_TOKEN``. ``calls`` counts
    HTTP requests actually sent, so tests can assert cache coherence.
    """

    tag = "remote"

    def __init__(self, url: str = DEFAULT_ENDPOINT, model: str = DEFAULT_MODEL, dim: int = TEXT_DIM,
                 batch_size: int = MAX_BATCH, retries: int = 3, backoff: float = 2.0,
                 session=None, sleep: Callable[[float], None] = time.sleep, token: str | None = None,
                 timeout: float = 60.0):
        if not 1 <= batch_size <= MAX_BATCH:
            raise ValueError(f"batch size must be in 1..{MAX_BATCH}")
        self.url = url
        self.model = model
        self.dim = dim
        self.batch_size = batch_size
        self.retries = retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.sleep = sleep
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout = timeout
        self.calls = 0

    def _post(self, texts: Sequence[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = json.dumps({"input": list(texts), "model": self.model})
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            self.calls += 1
            try:
                resp = self.session.post(self.url, data=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code < 400:
                    return self._decode(resp.content, len(texts))
                last = EmbeddingError(f"HTTP {resp.status_code} from embedding endpoint")
                if resp.status_code not in (408, 429, 500, 502, 503, 504):
                    break
                wait = resp.headers.get("Retry-After")
                if wait and wait.isdigit() and attempt < self.retries:
                    self.sleep(float(wait))
                    continue
            if attempt < self.retries:
                self.sleep(self.backoff ** (attempt + 1))
        raise EmbeddingError(f"embedding request failed after retries: {last}")

    def _decode(self, content: bytes, n: int) -> np.ndarray:
        try:
            items = sorted(json.loads(content)["data"], key=lambda d: d["index"])
            out = np.array([d["embedding"] for d in items], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError("malformed embedding response") from exc
        if out.shape != (n, self.dim):
            raise EmbeddingError(f"expected {n} vectors of dim {self.dim}, got shape {out.shape}")
        return out

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if any(not t.strip() for t in texts):
            raise EmbeddingError("cannot embed empty text")
        parts = [self._post(texts[i:i + self.batch_size]) for i in range(0, len(texts), self.batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, self.dim))


# -- cache -----------------------------------------------------------------------

class EmbeddingCache:
    """Vectors keyed by content hash; optionally persisted as TSV.

    File layout: a header line ``vulnkg-embeddings<TAB>1<TAB>dim`` then one
    line per vector: key, provider tag, space-separated floats (repr, exact).
    """

    def __init__(self, path: str | Path | None = None, dim: int = TEXT_DIM):
        self.path = Path(path) if path else None
        self.dim = dim
        self._data: dict[str, TextEmbedding] = {}
        self._lock = threading.Lock()
        self._dirty = False
        if self.path and self.path.exists():
            self._read()

    def _read(self) -> None:
        lines = self.path.read_text().splitlines()
        if not lines:
            return
        head = lines[0].split("\t")
        if head[:2] != ["vulnkg-embeddings", CACHE_VERSION]:
            raise EmbeddingError(f"unsupported embedding cache header in {self.path}")
        if int(head[2]) != self.dim:
            raise EmbeddingError(f"cache {self.path} holds dim {head[2]}, expected {self.dim}")
        for line in lines[1:]:
            key, provider, floats = line.split("\t")
            vec = np.array([float(x) for x in floats.split(" ")])
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"truncated cache row {key[:12]}")
            self._data[key] = TextEmbedding(key, vec, provider)

    def get(self, key: str) -> TextEmbedding | None:
        return self._data.get(key)

    def put(self, emb: TextEmbedding) -> None:
        with self._lock:
            self._data[emb.key] = emb
            self._dirty = True

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def save(self) -> None:
        if self.path is None or not self._dirty:
            return
        with self._lock:
            rows = [f"vulnkg-embeddings\t{CACHE_VERSION}\t{self.dim}"]
            for key in sorted(self._data):
                e = self._data[key]
                rows.append(f"{key}\t{e.provider}\t" + " ".join(repr(float(x)) for x in e.vector))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp.write_text("\n".join(rows) + "\n")
            tmp.replace(self.path)
            self._dirty = False


def get_text_embedding(entity: int, g: KnowledgeGraph, provider, cache: EmbeddingCache) -> TextEmbedding:
    """Embedding of the entity's description (its label when undescribed)."""
    return embed_texts([g.description(entity)], provider, cache)[0]


def embed_texts(texts: Sequence[str], provider, cache: EmbeddingCache) -> list[TextEmbedding]:
    keys = [content_key(t, provider.tag, provider.dim) for t in texts]
    missing: dict[str, str] = {}
    for k, t in zip(keys, texts):
        if cache.get(k) is None and k not in missing:
            missing[k] = t
    if missing:
        vecs = provider.embed(list(missing.values()))
        for k, v in zip(missing, vecs):
            cache.put(TextEmbedding(k, v, provider.tag))
    return [cache.get(k) for k in keys]


def entity_text_matrix(g: KnowledgeGraph, provider, cache: EmbeddingCache) -> np.ndarray:
    """[|E|, d_t] text vectors aligned with entity ids."""
    embs = embed_texts([g.description(i) for i in range(g.num_entities)], provider, cache)
    return np.stack([e.vector for e in embs]) if embs else np.zeros((0, provider.dim))


# -- relational feature ----------------------------------------------------------

def incidence_mean(g: KnowledgeGraph) -> sp.csr_matrix:
    """[|E|, |R|] row-stochastic matrix over the relation types touching each entity."""
    n_e, n_r = g.num_entities, g.num_relations
    ent = np.concatenate([g.heads, g.tails])
    rel = np.concatenate([g.rels, g.rels])
    m = sp.csr_matrix((np.ones(ent.shape[0]), (ent, rel)), shape=(n_e, n_r))
    m.data[:] = 1.0
    counts = np.asarray(m.sum(axis=1)).ravel()
    inv = np.divide(1.0, counts, out=np.zeros(n_e), where=counts > 0)
    return sp.csr_matrix(sp.diags(inv) @ m)


def relational_feature(entity: int, g: KnowledgeGraph, rq) -> np.ndarray:
    """Mean of R_q rows over relation types incident to ``entity``; zero if isolated."""
    data = rq.data if isinstance(rq, nc.Tensor) else np.asarray(rq)
    row = incidence_mean(g)[entity]
    return np.asarray(row @ data).reshape(-1)


# -- fusion layers -----------------------------------------------------------------

@dataclass
class FusionWeights:
    """Linear (d_t + d -> hidden), ReLU, linear (hidden -> d).

    The first layer's matrix is held as its text and relational row blocks, so
    the text half can be applied once per batch instead of once per query.
    """

    W1_text: nc.Tensor
    W1_rel: nc.Tensor
    b1: nc.Tensor
    W2: nc.Tensor
    b2: nc.Tensor

    NAMES = ("W1_text", "W1_rel", "b1", "W2", "b2")

    @classmethod
    def init(cls, rng: np.random.Generator, text_dim: int, dim: int, hidden: int) -> "FusionWeights":
        if text_dim < dim:
            raise ValueError("text dimension must be at least the GNN dimension")
        lim1 = np.sqrt(6.0 / (text_dim + dim + hidden))
        w1 = rng.uniform(-lim1, lim1, size=(text_dim + dim, hidden))
        lim2 = np.sqrt(6.0 / (hidden + dim))
        w2 = rng.uniform(-lim2, lim2, size=(hidden, dim))
        return cls(nc.Parameter(w1[:text_dim], name="fusion.W1_text"), nc.Parameter(w1[text_dim:], name="fusion.W1_rel"),
                   nc.Parameter(np.zeros(hidden), name="fusion.b1"), nc.Parameter(w2, name="fusion.W2"),
                   nc.Parameter(np.zeros(dim), name="fusion.b2"))

    @classmethod
    def from_params(cls, params: Mapping[str, nc.Tensor]) -> "FusionWeights":
        return cls(*(params[f"fusion.{n}"] for n in cls.NAMES))

    def named(self) -> dict[str, nc.Tensor]:
        return {f"fusion.{n}": getattr(self, n) for n in self.NAMES}

    @property
    def text_dim(self) -> int:
        return self.W1_text.shape[0]

    @property
    def dim(self) -> int:
        return self.W2.shape[1]

    def first_layer(self) -> np.ndarray:
        """The single (d_t + d) x hidden matrix the two blocks stand for."""
        return np.vstack([self.W1_text.data, self.W1_rel.data])


def _as_tensor(x) -> nc.Tensor:
    return x if isinstance(x, nc.Tensor) else nc.Tensor(np.asarray(x, dtype=np.float64))


def fuse(text, rel, weights: FusionWeights) -> nc.Tensor:
    """concat(text, rel) -> linear -> ReLU -> linear.

    Takes one vector each (result is a d-vector) or row-aligned matrices.
    """
    t, r = _as_tensor(text), _as_tensor(rel)
    single = t.data.ndim == 1
    if single:
        t, r = nc.reshape(t, (1, -1)), nc.reshape(r, (1, -1))
    if t.shape[1] != weights.text_dim or r.shape[1] != weights.W1_rel.shape[0] or t.shape[0] != r.shape[0]:
        raise ValueError(f"fuse: got text {t.shape} and rel {r.shape}, weights expect "
                         f"({weights.text_dim}, {weights.W1_rel.shape[0]})")
    pre = nc.add(nc.matmul(t, weights.W1_text), nc.matmul(r, weights.W1_rel))
    out = nc.add_bias(nc.matmul(nc.relu(nc.add_bias(pre, weights.b1)), weights.W2), weights.b2)
    return nc.reshape(out, (-1,)) if single else out


def fused_features(g: KnowledgeGraph, text: np.ndarray, rq: nc.Tensor, slots: Sequence[int],
                   weights: FusionWeights, incidence: sp.csr_matrix | None = None) -> nc.Tensor:
    """Fused per-entity features for a batch, stacked [len(slots) * |E|, d].

    ``rq`` stacks one |R| x d block per distinct query relation; query b uses
    block ``slots[b]``. The text half of the first layer is computed once.
    """
    n_e, n_r = g.num_entities, g.num_relations
    if text.shape != (n_e, weights.text_dim):
        raise ValueError(f"text matrix {text.shape} does not match ({n_e}, {weights.text_dim})")
    m = incidence_mean(g) if incidence is None else incidence
    text_part = nc.matmul(nc.Tensor(text), weights.W1_text)
    per_slot: dict[int, nc.Tensor] = {}
    for s in sorted(set(int(x) for x in slots)):
        block = nc.gather_rows(rq, np.arange(s * n_r, (s + 1) * n_r))
        rel = nc.const_matmul(m, block)
        pre = nc.add_bias(nc.add(text_part, nc.matmul(rel, weights.W1_rel)), weights.b1)
        per_slot[s] = nc.add_bias(nc.matmul(nc.relu(pre), weights.W2), weights.b2)
    return nc.concat([per_slot[int(s)] for s in slots], axis=0)

