"""Negative sampling, the binary cross-entropy objective, Adam, the training
loop and the binary checkpoint container."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .evalrank import evaluate_split
from .gnn import GraphContext, LinkPredictor, ModelConfig, ModelParams
from .kgstore.graph import KnowledgeGraph, augment_inverses
from .kgstore.split import DatasetSplit
from .kgstore.storage import graph_checksum

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    negatives: int = 64
    epochs: int = 10
    batches_per_epoch: int | None = None  # None: one pass over all training queries
    batch_size: int = 64
    seed: int = 0
    inverse_augmentation: bool = True
    fusion: bool = True
    dim: int = 64
    relation_layers: int = 6
    entity_layers: int = 6
    text_dim: int = 1536
    fusion_hidden: int = 800
    remove_query_edges: bool = True
    layer_norm: bool = True
    both_directions: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    validate_every: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.negatives < 1:
            raise ValueError("need at least one negative per positive")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if self.both_directions and not self.inverse_augmentation:
            raise ValueError("head-direction training queries need inverse augmentation")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.dim, self.relation_layers, self.entity_layers, self.fusion, self.text_dim,
                           self.fusion_hidden, self.remove_query_edges, self.layer_norm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**dict(d))


# -- negatives and loss ---------------------------------------------------------------

class NegativePoolWarning(UserWarning):
    pass


def sample_negatives(positive: tuple[int, int, int], n: int, g: KnowledgeGraph,
                     rng: np.random.Generator) -> np.ndarray:
    """``n`` corrupted triples (h, r, t') with t' of the true tail's kind and
    (h, r, t') not a triple of ``g``. Returns an [n, 3] array."""
    h, r, t = (int(x) for x in positive)
    pool = g.entities_of_kind(g.kind_of(t))
    trues = g.tails_of(h, r) | {t}
    pool = pool[~np.isin(pool, np.fromiter(trues, dtype=np.int64, count=len(trues)))]
    if pool.size == 0:
        raise ValueError(f"no negative candidates for {positive}")
    if pool.size < n:
        warnings.warn(f"only {pool.size} negative candidates for {n} draws; sampling with replacement",
                      NegativePoolWarning, stacklevel=2)
    tails = rng.choice(pool, size=n, replace=pool.size < n)
    return np.stack([np.full(n, h), np.full(n, r), tails], axis=1).astype(np.int64)


def bce_loss(p_pos, p_negs) -> nc.Tensor:
    """-log p_pos - (1/n) sum log(1 - p_neg), logs clamped at 1e-12.

    Accepts plain numbers or tensors (p_pos scalar-like, p_negs a vector).
    """
    pos = p_pos if isinstance(p_pos, nc.Tensor) else nc.Tensor(np.asarray(p_pos, dtype=np.float64))
    neg = p_negs if isinstance(p_negs, nc.Tensor) else nc.Tensor(np.asarray(p_negs, dtype=np.float64))
    n = neg.data.size
    if n == 0:
        raise ValueError("need at least one negative")
    one = nc.Tensor(np.ones(neg.shape))
    pos_term = nc.sum_all(nc.log(pos, EPS))
    neg_term = nc.sum_all(nc.log(nc.sub(one, neg), EPS))
    return nc.scale(nc.add(pos_term, nc.scale(neg_term, 1.0 / n)), -1.0)


def bce_loss_logits(pos_logits: nc.Tensor, neg_logits: nc.Tensor, n: int) -> nc.Tensor:
    """Batch mean of the same objective written on logits:
    softplus(-x_pos) + (1/n) sum softplus(x_neg). Stable for any logit."""
    b = pos_logits.data.size
    if neg_logits.data.size != b * n:
        raise ValueError("expected n negatives per positive")
    pos = nc.sum_all(nc.softplus(nc.scale(pos_logits, -1.0)))
    neg = nc.sum_all(nc.softplus(neg_logits))
    return nc.scale(nc.add(pos, nc.scale(neg, 1.0 / n)), 1.0 / b)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: Sequence[nc.Parameter], lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- checkpoints -----------------------------------------------------------------

MAGIC = b"VKGCKPT\x00"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    graph_checksum: str
    epoch: int
    loss_log: list[float] = field(default_factory=list)
    best_valid_mrr: float | None = None

    def predictor(self) -> LinkPredictor:
        return LinkPredictor(self.params)


def write_container(path: str | Path, kind: str, header: dict, blocks: Mapping[str, np.ndarray]) -> None:
    """MAGIC, u32 header length, JSON header, float64 blocks, sha256 of all before it."""
    index, offset, chunks = [], 0, []
    for name, arr in blocks.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    head = json.dumps({"format_version": CKPT_VERSION, "kind": kind, **header, "blocks": index},
                      sort_keys=True).encode()
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


def read_container(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 36 or not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch in {path}; file is corrupt or truncated")
    (hlen,) = struct.unpack("<I", body[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    head = json.loads(body[start:start + hlen])
    if head.get("format_version") != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {head.get('format_version')!r}")
    if head.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {head.get('kind')!r} checkpoint, expected {kind!r}")
    payload = body[start + hlen:]
    blocks = {}
    for b in head["blocks"]:
        n = int(np.prod(b["shape"])) if b["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=b["offset"]).astype(np.float64)
        blocks[b["name"]] = arr.reshape(b["shape"])
    return head, blocks


def save_checkpoint(c: Checkpoint, path: str | Path) -> None:
    header = {"config": c.config.to_dict(), "graph_checksum": c.graph_checksum, "epoch": c.epoch,
              "loss_log": c.loss_log, "best_valid_mrr": c.best_valid_mrr}
    write_container(path, "model", header, c.params.state_dict())


def load_checkpoint(path: str | Path, graph_checksum: str | None = None, force: bool = False) -> Checkpoint:
    """Read a checkpoint; when ``graph_checksum`` is given it must match the
    recorded training graph unless ``force``."""
    head, blocks = read_container(path, "model")
    if graph_checksum is not None and head["graph_checksum"] != graph_checksum and not force:
        raise CheckpointError("checkpoint was trained on a different graph (pass force to override)")
    cfg = TrainConfig.from_dict(head["config"])
    params = ModelParams.init(cfg.model_config(), seed=cfg.seed)
    params.load_state_dict(blocks)
    return Checkpoint(params, cfg, head["graph_checksum"], head["epoch"], list(head["loss_log"]),
                      head.get("best_valid_mrr"))


# -- training loop ---------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite; ``checkpoint`` is the last good state."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def training_queries(g: KnowledgeGraph, task_relations: Sequence[str], both_directions: bool) -> np.ndarray:
    """(head, relation, tail) training queries from the forward task triples of
    an augmented or plain graph; head direction through the inverse relation."""
    n = g.num_forward_relations
    ids = [g.relation_id(r) for r in task_relations]
    keep = np.isin(g.rels, ids)
    q = np.stack([g.heads[keep], g.rels[keep], g.tails[keep]], axis=1)
    if both_directions:
        q = np.concatenate([q, np.stack([q[:, 2], q[:, 1] + n, q[:, 0]], axis=1)])
    return q


def batch_loss(model: LinkPredictor, ctx: GraphContext, batch: np.ndarray, negs: np.ndarray) -> nc.Tensor:
    n_e = ctx.graph.num_entities
    b, n = negs.shape
    logits = model.forward(ctx, batch[:, 0], batch[:, 1], hide_tails=batch[:, 2].tolist())
    base = np.arange(b) * n_e
    pos = nc.gather_rows(logits, base + batch[:, 2])
    neg = nc.gather_rows(logits, (base[:, None] + negs).reshape(-1))
    return bce_loss_logits(pos, neg, n)


def train(g_train: KnowledgeGraph, cfg: TrainConfig, text: np.ndarray | None = None,
          valid: DatasetSplit | None = None, checkpoint_dir: str | Path | None = None,
          task_relations: Sequence[str] | None = None, init: ModelParams | None = None) -> Checkpoint:
    """Train from scratch on ``g_train`` (forward triples; augmented here when
    the config asks and it is not already).

    ``text`` is the [|E|, d_t] embedding matrix, required with fusion. With
    ``valid`` the validation MRR is computed every ``validate_every`` epochs and
    the best state is kept (and written to ``best.ckpt``). The final state goes
    to ``last.ckpt``. The returned checkpoint is the best-validation one when
    validation ran, else the last.
    """
    mcfg = cfg.model_config()
    if mcfg.fusion and text is None:
        raise ValueError("fusion is enabled: pass the entity text matrix")
    fwd = g_train if not g_train.augmented else None
    checksum = graph_checksum(fwd if fwd is not None else g_train)
    g = augment_inverses(g_train) if cfg.inverse_augmentation and not g_train.augmented else g_train
    tasks = tuple(task_relations or g.schema.task_relations or g.schema.relation_names())
    queries = training_queries(g, tasks, cfg.both_directions)
    if queries.size == 0:
        raise ValueError("no training triples for the task relations")
    params = init if init is not None else ModelParams.init(mcfg, seed=cfg.seed)
    model = LinkPredictor(params)
    ctx = GraphContext(g, text if mcfg.fusion else None)
    opt = Adam(list(params), cfg.learning_rate, cfg.betas)
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(checkpoint_dir) if checkpoint_dir else None
    loss_log: list[float] = []
    snapshot = lambda epoch: Checkpoint(ModelParams(mcfg, {k: nc.Parameter(v, name=k) for k, v in
                                                           params.state_dict().items()}),
                                        cfg, checksum, epoch, list(loss_log), best_mrr)
    best_mrr: float | None = None
    best: Checkpoint | None = None
    last_good = snapshot(0)
    with warnings.catch_warnings():
        warnings.simplefilter("once", NegativePoolWarning)
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            for pick in _epoch_batches(len(queries), cfg, rng):
                batch = queries[pick]
                negs = np.stack([sample_negatives(tuple(q), cfg.negatives, g, rng)[:, 2] for q in batch])
                params.zero_grad()
                try:
                    loss = batch_loss(model, ctx, batch, negs)
                    nc.backward(loss)
                except nc.NonFiniteError as exc:
                    params.load_state_dict(last_good.params.state_dict())
                    _save(last_good, out_dir, "last.ckpt")
                    raise TrainingDiverged(f"non-finite values at epoch {epoch}: {exc}", last_good) from exc
                opt.step()
                losses.append(float(loss.data))
            loss_log.append(float(np.mean(losses)))
            logger.info("epoch %d loss %.6f", epoch, loss_log[-1])
            if valid is not None and cfg.validate_every and epoch % cfg.validate_every == 0:
                ev = evaluate_split(model, valid, "all", True, "valid", text, cfg.both_directions,
                                    cfg.inverse_augmentation)
                score = ev.reports["all"].mrr
                logger.info("epoch %d valid MRR %.4f", epoch, score)
                if best_mrr is None or score > best_mrr:
                    best_mrr = score
                    best = snapshot(epoch)
                    _save(best, out_dir, "best.ckpt")
            last_good = snapshot(epoch)
    last = snapshot(cfg.epochs)
    _save(last, out_dir, "last.ckpt")
    if best is not None:
        best.loss_log = list(loss_log)
        best.best_valid_mrr = best_mrr
        return best
    return last


def _epoch_batches(n: int, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """One shuffled pass, or exactly ``batches_per_epoch`` full batches drawn
    from back-to-back shuffles."""
    if not cfg.batches_per_epoch:
        order = rng.permutation(n)
        return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
    need = cfg.batches_per_epoch * cfg.batch_size
    stream = np.concatenate([rng.permutation(n) for _ in range(-(-need // n))])[:need]
    return list(stream.reshape(cfg.batches_per_epoch, cfg.batch_size))


def _save(c: Checkpoint, out_dir: Path | None, name: str) -> None:
    if out_dir is not None:
        save_checkpoint(c, out_dir / name)


def grid_search(split: DatasetSplit, base: TrainConfig, grid: Mapping[str, Sequence], text: np.ndarray | None = None
                ) -> list[tuple[dict, float]]:
    """Train one model per cell of the Cartesian product of ``grid`` and report
    its validation MRR. Cells come back in grid order."""
    if split.valid is None or len(split.valid) == 0:
        raise ValueError("grid search needs validation triples")
    names = list(grid)
    out = []
    for values in itertools.product(*(grid[n] for n in names)):
        cell = dict(zip(names, values))
        cfg = replace(base, validate_every=0, **cell)
        ckpt = train(split.part("train"), cfg, text, task_relations=split.task_relations)
        ev = evaluate_split(ckpt.predictor(), split, "all", True, "valid", text, cfg.both_directions,
                            cfg.inverse_augmentation)
        out.append((cell, ev.reports["all"].mrr))
    return out
