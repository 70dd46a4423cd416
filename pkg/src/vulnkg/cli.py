"""Command-line pipeline: ingest -> build -> split -> train -> eval -> predict.

Every command reads one YAML run configuration (``--config``). Outputs record
the configuration checksum so reports can be traced to exact settings.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import shutil
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import fusion as fz
from .baselines import TransEConfig, TransductiveOnlyError, save_transe, transe_train
from .evalrank import evaluate_split, predict_report, write_evaluation, write_predictions
from .ingest import fetch_change_history, fetch_records, load_cves, load_cwes
from .ingest.fetch import FetchError, NVD_API_KEY_ENV
from .kgstore import (BuildReport, DatasetSplit, build_graph, cpe_delay_report, graph_checksum, graph_stats,
                      load_graph, missing_cwe_report, save_graph, split_inductive, split_transductive)
from .kgstore.graph import augment_inverses
from .synthetic import PlantedConfig, planted_graph
from .trainer import CheckpointError, TrainConfig, load_checkpoint, train

logger = logging.getLogger("vulnkg")

FIXTURES = Path(__file__).parent / "data" / "fixtures"
SOURCES = ("nvd", "redhat", "synthetic")


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------------

@dataclass
class Paths:
    fixtures: str | None = None  # offline source directory; bundled fixture by default
    cwe_catalog: str | None = None  # CWE XML/CSV (or zip); bundled catalog by default
    cache: str = "run/cache"
    graph: str = "run/graph"
    splits: str = "run/splits"
    checkpoints: str = "run/checkpoints"
    reports: str = "run/reports"
    embeddings: str = "run/embeddings.tsv"


@dataclass
class IngestOptions:
    since: dt.date | None = None


@dataclass
class BuildOptions:
    cwe_scope: str = "referenced"


@dataclass
class SplitOptions:
    mode: str = "transductive"
    valid_fraction: float = 0.05
    test_fraction: float = 0.1
    train_cutoff: dt.date = dt.date(2023, 1, 1)
    test_cutoff: dt.date = dt.date(2023, 10, 18)
    task_relations: list[str] | None = None


@dataclass
class EvalOptions:
    task: str = "all"
    filtered: bool = True
    both_directions: bool = True


@dataclass
class EmbeddingOptions:
    provider: str = "local"
    url: str = fz.DEFAULT_ENDPOINT
    model: str = fz.DEFAULT_MODEL
    batch_size: int = fz.MAX_BATCH


@dataclass
class SyntheticOptions:
    n_x: int = 150
    n_y: int = 50
    n_z: int = 45
    new_fraction: float = 0.1
    descriptions: bool = True


@dataclass
class TrainOptions:
    learning_rate: float = 5e-4
    negatives: int = 64
    epochs: int = 10
    batches_per_epoch: int | None = None
    batch_size: int = 64
    inverse_augmentation: bool = True
    fusion: bool = True
    dim: int = 64
    relation_layers: int = 6
    entity_layers: int = 6
    text_dim: int = fz.TEXT_DIM
    fusion_hidden: int = 800
    remove_query_edges: bool = True
    layer_norm: bool = True
    validate_every: int = 1


@dataclass
class RunConfig:
    source: str
    mode: str = "offline"
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    ingest: IngestOptions = field(default_factory=IngestOptions)
    build: BuildOptions = field(default_factory=BuildOptions)
    split: SplitOptions = field(default_factory=SplitOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    embedding: EmbeddingOptions = field(default_factory=EmbeddingOptions)
    synthetic: SyntheticOptions = field(default_factory=SyntheticOptions)
    base_dir: str = field(default=".", metadata={"internal": True})

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(seed=self.seed, both_directions=self.eval.both_directions,
                           **{f.name: getattr(t, f.name) for f in dataclasses.fields(t)})

    def path(self, name: str) -> Path:
        value = getattr(self.paths, name)
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def fixture_dir(self) -> Path:
        if self.paths.fixtures:
            return self.path("fixtures")
        return FIXTURES / self.source

    def cwe_catalog(self) -> Path:
        return self.path("cwe_catalog") if self.paths.cwe_catalog else FIXTURES / "cwec.xml"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return json.loads(json.dumps(d, default=str))

    def checksum(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _check_type(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _check_type(value, a, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{where}: bad value {value!r}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        (inner,) = typing.get_args(tp)
        return [_check_type(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is dt.date:
        if isinstance(value, dt.date):
            return value
        try:
            return dt.date.fromisoformat(str(value))
        except ValueError:
            raise ConfigError(f"{where}: expected a YYYY-MM-DD date, got {value!r}") from None
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    raise ConfigError(f"{where}: unsupported type {tp}")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    fields_ = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(data) - set(fields_))
    if unknown:
        raise ConfigError(f"unknown key {'.'.join(filter(None, [where, unknown[0]]))!r}")
    kwargs = {}
    for name, f in fields_.items():
        key = ".".join(filter(None, [where, name]))
        if name in data:
            kwargs[name] = _check_type(data[name], hints[name], key)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"missing required key {key!r}")
    return cls(**kwargs)


def parse_config(path: str | Path) -> RunConfig:
    """Load and validate a YAML run configuration; relative paths resolve
    against the file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    cfg = _build(RunConfig, data, "")
    cfg.base_dir = str(path.resolve().parent)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    choices = {"source": (cfg.source, SOURCES), "mode": (cfg.mode, ("offline", "live")),
               "split.mode": (cfg.split.mode, ("transductive", "inductive")),
               "build.cwe_scope": (cfg.build.cwe_scope, ("referenced", "catalog")),
               "embedding.provider": (cfg.embedding.provider, ("local", "remote"))}
    for key, (value, allowed) in choices.items():
        if value not in allowed:
            raise ConfigError(f"{key}: {value!r} is not one of {', '.join(allowed)}")
    if cfg.mode == "offline" and cfg.source != "synthetic":
        if not cfg.fixture_dir().exists():
            raise ConfigError(f"paths.fixtures: {cfg.fixture_dir()} does not exist")
        if not cfg.cwe_catalog().exists():
            raise ConfigError(f"paths.cwe_catalog: {cfg.cwe_catalog()} does not exist")
    if cfg.split.train_cutoff >= cfg.split.test_cutoff:
        raise ConfigError("split.train_cutoff must precede split.test_cutoff")
    if cfg.train.fusion and cfg.train.text_dim < cfg.train.dim:
        raise ConfigError("train.text_dim must be at least train.dim")
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None


# -- helpers ---------------------------------------------------------------------------

def _raw_dir(cfg: RunConfig) -> Path:
    return cfg.path("cache") / cfg.source


def _stamp(cfg: RunConfig, **extra) -> dict:
    return {"config_checksum": cfg.checksum(), **extra}


def _load_records(cfg: RunConfig):
    raw = _raw_dir(cfg)
    if not (raw / "manifest.json").exists():
        raise FileNotFoundError(f"no ingested data in {raw}; run `ingest` first")
    cves = load_cves(cfg.source, raw, "offline", since=cfg.ingest.since)
    cwes = load_cwes(cfg.path("cache") / "cwe" / "catalog", "offline")
    return cves, cwes


def _load_split(cfg: RunConfig) -> DatasetSplit:
    g = load_graph(cfg.path("graph"))
    path = cfg.path("splits") / "split.json"
    if not path.exists():
        raise FileNotFoundError(f"no split at {path}; run `split` first")
    return DatasetSplit.load(path, g)


def _text_matrix(cfg: RunConfig, g) -> np.ndarray | None:
    if not cfg.train.fusion:
        return None
    if cfg.embedding.provider == "local" or cfg.mode == "offline":
        provider = fz.LocalHashEmbedder(dim=cfg.train.text_dim)
    else:
        provider = fz.RemoteEmbedder(cfg.embedding.url, cfg.embedding.model, cfg.train.text_dim,
                                         cfg.embedding.batch_size)
    cache = fz.EmbeddingCache(cfg.path("embeddings"), dim=cfg.train.text_dim)
    text = fz.entity_text_matrix(g, provider, cache)
    cache.save()
    return text


def _checkpoint_path(cfg: RunConfig) -> Path:
    d = cfg.path("checkpoints")
    for name in ("best.ckpt", "last.ckpt"):
        if (d / name).exists():
            return d / name
    raise FileNotFoundError(f"no checkpoint in {d}; run `train` first")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


# -- commands ----------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, args) -> int:
    if cfg.source == "synthetic":
        print("synthetic source: nothing to ingest")
        return 0
    raw = _raw_dir(cfg)
    cwe_dir = cfg.path("cache") / "cwe"
    since = cfg.ingest.since
    if cfg.mode == "offline":
        # offline ingest snapshots the fixture into the cache
        if raw.exists():
            shutil.rmtree(raw)
        shutil.copytree(cfg.fixture_dir(), raw)
        docs = fetch_records(cfg.source, since=since, mode="offline", location=raw)
    else:
        docs = fetch_records(cfg.source, since=since, mode="live", location=raw)
        if cfg.source == "nvd":
            fetch_change_history(since=since, mode="live", location=raw)
    cwe_dir.mkdir(parents=True, exist_ok=True)
    if cfg.mode == "offline":
        shutil.copyfile(cfg.cwe_catalog(), cwe_dir / "catalog")
    else:
        body = fetch_records("mitre_cwe", mode="live", location=cwe_dir / "live")[0]
        (cwe_dir / "catalog").write_bytes(body)
    _write_json(cfg.path("cache") / "ingest.json", _stamp(cfg, source=cfg.source, documents=len(docs)))
    print(f"ingested {len(docs)} {cfg.source} documents into {raw}")
    return 0


def cmd_build(cfg: RunConfig, args) -> int:
    if cfg.source == "synthetic":
        s = cfg.synthetic
        g = planted_graph(cfg.seed, PlantedConfig(n_x=s.n_x, n_y=s.n_y, n_z=s.n_z, new_fraction=s.new_fraction,
                                                  descriptions=s.descriptions))
        report = {}
    else:
        cves, cwes = _load_records(cfg)
        rep = BuildReport()
        g = build_graph(cves, cwes, cfg.build.cwe_scope, report=rep)
        report = {**dataclasses.asdict(rep), "unknown_cwes": sorted(rep.unknown_cwes)}
    checksum = save_graph(g, cfg.path("graph"))
    _write_json(cfg.path("graph") / "build.json", _stamp(cfg, graph_checksum=checksum, report=report))
    print(f"graph: {g.num_entities} entities, {g.num_triples} triples -> {cfg.path('graph')}")
    return 0


def cmd_split(cfg: RunConfig, args) -> int:
    s = cfg.split
    mode = args.mode or s.mode
    g = load_graph(cfg.path("graph"))
    tasks = s.task_relations
    valid = args.valid_fraction if args.valid_fraction is not None else s.valid_fraction
    test = args.test_fraction if args.test_fraction is not None else s.test_fraction
    if mode == "transductive":
        split = split_transductive(g, valid, test, cfg.seed, tasks)
    else:
        c1 = args.train_cutoff or s.train_cutoff
        c2 = args.test_cutoff or s.test_cutoff
        split = split_inductive(g, c1, c2, valid, cfg.seed, test, tasks)
    split.meta.update(_stamp(cfg, graph_checksum=graph_checksum(g)))
    out = cfg.path("splits")
    out.mkdir(parents=True, exist_ok=True)
    split.save(out / "split.json")
    print(f"{mode} split {split.counts()} -> {out / 'split.json'}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    tc = cfg.train_config()
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    text = _text_matrix(cfg, split.graph)
    has_valid = split.valid is not None and len(split.valid) > 0
    ckpt = train(split.part("train"), tc, text, valid=split if has_valid else None,
                 checkpoint_dir=cfg.path("checkpoints"), task_relations=split.task_relations)
    log = ["epoch\tloss"] + [f"{i + 1}\t{v!r}" for i, v in enumerate(ckpt.loss_log)]
    (cfg.path("checkpoints") / "loss.tsv").write_text(f"# config_checksum\t{cfg.checksum()}\n" + "\n".join(log) + "\n")
    _write_json(cfg.path("checkpoints") / "train.json",
                _stamp(cfg, epoch=ckpt.epoch, best_valid_mrr=ckpt.best_valid_mrr, graph_checksum=ckpt.graph_checksum))
    print(f"trained {len(ckpt.loss_log)} epochs; final loss {ckpt.loss_log[-1] if ckpt.loss_log else float('nan'):.4f}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    task = args.task or cfg.eval.task
    filtered = cfg.eval.filtered and not args.raw
    reports = cfg.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    if args.baseline == "transe":
        if split.mode != "transductive":
            raise TransductiveOnlyError("TransE cannot be evaluated on an inductive split")
        params = transe_train(split, TransEConfig(seed=cfg.seed, inverse_augmentation=cfg.train.inverse_augmentation))
        save_transe(params, cfg.path("checkpoints") / "transe.ckpt")
        ev = evaluate_split(params, split, task, filtered, "test", None, cfg.eval.both_directions,
                            cfg.train.inverse_augmentation)
        stem = "metrics-transe"
    else:
        ckpt = load_checkpoint(_checkpoint_path(cfg), graph_checksum(split.part("train")), force=args.force)
        text = _text_matrix(cfg, split.graph) if ckpt.config.fusion else None
        ev = evaluate_split(ckpt.predictor(), split, task, filtered, "test", text, cfg.eval.both_directions,
                            ckpt.config.inverse_augmentation)
        stem = "metrics"
    write_evaluation(ev, reports / f"{stem}.tsv", reports / f"{stem}.json", cfg.checksum())
    for name, rep in ev.reports.items():
        hits = " ".join(f"H@{k}={v:.4f}" for k, v in rep.hits.items())
        print(f"{name:<10} MRR={rep.mrr:.4f} {hits} |Q|={rep.count}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    ckpt = load_checkpoint(_checkpoint_path(cfg), graph_checksum(split.part("train")), force=args.force)
    g = split.part(split.ranking_part)
    if ckpt.config.inverse_augmentation:
        g = augment_inverses(g)
    text = _text_matrix(cfg, split.graph) if ckpt.config.fusion else None
    kind = "CVE" if "CVE" in g.schema.kinds else None
    rows = predict_report(ckpt.predictor(), g, args.cve, args.relation, args.top, not args.include_known, text,
                          entity_kind=kind)
    reports = cfg.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    stem = f"predict-{args.cve}-{args.relation}"
    table = write_predictions(rows, reports / f"{stem}.txt", reports / f"{stem}.json",
                              _stamp(cfg, entity=args.cve, relation=args.relation, exclude_known=not args.include_known))
    print(table, end="")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    out: dict = {}
    if cfg.path("graph").joinpath("manifest").exists():
        out["graph"] = graph_stats(load_graph(cfg.path("graph")))
    if cfg.source != "synthetic" and (_raw_dir(cfg) / "manifest.json").exists():
        cves, _ = _load_records(cfg)
        out["cpe_delay"] = {str(y): {str(k): v for k, v in row.items()} for y, row in cpe_delay_report(cves).items()}
        out["missing_cwe_fraction"] = missing_cwe_report(cves)
    if not out:
        raise FileNotFoundError("nothing to describe yet; run `ingest` or `build` first")
    out["config_checksum"] = cfg.checksum()
    _write_json(cfg.path("reports") / "stats.json", out)
    print(json.dumps(out, indent=1, sort_keys=True))
    return 0


COMMANDS = {"ingest": cmd_ingest, "build": cmd_build, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "stats": cmd_stats}


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vulnkg", description="Vulnerability knowledge-graph link prediction pipeline.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=("environment:\n"
                f"  {NVD_API_KEY_ENV:<24}NVD API key for live ingestion (raises the rate limit)\n"
                f"  {fz.TOKEN_ENV:<24}bearer token for the remote embedding endpoint\n"))
    p.add_argument("--config", default="vulnkg.yaml", help="run configuration (YAML); default: %(default)s")
    p.add_argument("--offline", action="store_true", help="force fixture mode, no network access")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)
    sub.add_parser("ingest", help="fetch raw records into the cache")
    sub.add_parser("build", help="build the knowledge graph from cached records")
    sp = sub.add_parser("split", help="write a transductive or inductive split")
    sp.add_argument("--mode", choices=("transductive", "inductive"))
    sp.add_argument("--train-cutoff", type=_date)
    sp.add_argument("--test-cutoff", type=_date)
    sp.add_argument("--valid-fraction", type=float)
    sp.add_argument("--test-fraction", type=float)
    tp = sub.add_parser("train", help="train the GNN and write checkpoints and the loss log")
    tp.add_argument("--epochs", type=int)
    ep = sub.add_parser("eval", help="rank the test triples and write metric reports")
    ep.add_argument("--task", choices=("cve_cwe", "cve_cpe", "all"))
    ep.add_argument("--raw", action="store_true", help="unfiltered ranking")
    ep.add_argument("--baseline", choices=("transe",))
    ep.add_argument("--force", action="store_true", help="accept a checkpoint trained on another graph")
    pp = sub.add_parser("predict", help="rank candidate links for one CVE")
    pp.add_argument("--cve", required=True)
    pp.add_argument("--relation", required=True)
    pp.add_argument("--top", type=int, default=10)
    pp.add_argument("--include-known", action="store_true", help="keep links already in the graph")
    pp.add_argument("--force", action="store_true")
    sub.add_parser("stats", help="graph statistics, CPE-delay and missing-CWE reports")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.offline:
            cfg.mode = "offline"
            validate_config(cfg)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError, FetchError, CheckpointError,
            fz.EmbeddingError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vulnkg {args.command}: error: {msg}", file=sys.stderr)
        return 1
