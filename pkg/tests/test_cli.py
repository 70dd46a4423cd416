import json
import subprocess
import sys

import pytest
import yaml

from vulnkg import cli

SMALL_TRAIN = {"dim": 8, "relation_layers": 2, "entity_layers": 2, "negatives": 4, "batch_size": 16, "epochs": 2,
               "text_dim": 16, "fusion_hidden": 8, "learning_rate": 0.005}


def write_config(tmp_path, **sections):
    body = {"source": "synthetic", "seed": 3, "synthetic": {"n_x": 30, "n_y": 10, "n_z": 9},
            "train": dict(SMALL_TRAIN), **sections}
    path = tmp_path / "vulnkg.yaml"
    path.write_text(yaml.safe_dump(body))
    return path


def run(cfg_path, *args):
    return cli.main(["--config", str(cfg_path), *args])


# -- configuration -------------------------------------------------------------------------

def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("source: synthetic\n")
    cfg = cli.parse_config(p)
    assert cfg.train.dim == 64 and cfg.train.negatives == 64 and cfg.eval.filtered is True
    assert cli.parse_config(p) == cfg
    assert cfg.path("graph") == tmp_path / "run" / "graph"


@pytest.mark.parametrize("body, message", [
    ("source: synthetic\ntrain:\n  learnig_rate: 0.1\n", "unknown key 'train.learnig_rate'"),
    ("mode: offline\n", "missing required key 'source'"),
    ("source: synthetic\nseed: abc\n", "seed: expected an integer"),
    ("source: synthetic\ntrain:\n  fusion: 1\n", "train.fusion: expected true/false"),
    ("source: jira\n", "source: 'jira' is not one of"),
    ("source: synthetic\nsplit:\n  train_cutoff: 2024-01-01\n", "train_cutoff must precede"),
    ("source: synthetic\ntrain:\n  negatives: 0\n", "train:"),
])
def test_config_errors_name_the_problem(tmp_path, capsys, body, message):
    p = tmp_path / "c.yaml"
    p.write_text(body)
    with pytest.raises(cli.ConfigError, match=message):
        cli.parse_config(p)
    assert run(p, "build") == 1
    assert message.split(":")[0] in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run(tmp_path / "nope.yaml", "build") == 1
    assert "not found" in capsys.readouterr().err


def test_checksum_tracks_settings(tmp_path):
    a = cli.parse_config(write_config(tmp_path))
    b = cli.parse_config(write_config(tmp_path, seed=4))
    assert a.checksum() != b.checksum() and len(a.checksum()) == 64


def test_unknown_command_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["--config", str(write_config(tmp_path)), "serve"])
    assert info.value.code == 2


def test_help_documents_environment():
    out = subprocess.run([sys.executable, "-m", "vulnkg", "--help"], capture_output=True, text=True, check=True).stdout
    assert "NVD_API_KEY" in out and "VULNKG_EMBEDDING_TOKEN" in out
    for cmd in cli.COMMANDS:
        assert cmd in out


# -- pipelines ------------------------------------------------------------------------------

def test_synthetic_pipeline_end_to_end(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    checksum = cli.parse_config(cfg_path).checksum()
    for step in (["ingest"], ["build"], ["split"], ["train"], ["eval"]):
        assert run(cfg_path, "--offline", *step) == 0, step
    root = tmp_path / "run"
    metrics = json.loads((root / "reports" / "metrics.json").read_text())
    assert metrics["config_checksum"] == checksum
    assert 0 < metrics["reports"]["all"]["mrr"] <= 1
    assert (root / "reports" / "metrics.tsv").read_text().startswith(f"# config_checksum\t{checksum}")
    assert json.loads((root / "graph" / "build.json").read_text())["config_checksum"] == checksum
    assert json.loads((root / "splits" / "split.json").read_text())["meta"]["config_checksum"] == checksum
    loss = (root / "checkpoints" / "loss.tsv").read_text().splitlines()
    assert loss[0] == f"# config_checksum\t{checksum}" and len(loss) == 2 + SMALL_TRAIN["epochs"]
    assert (root / "embeddings.tsv").exists()

    assert run(cfg_path, "eval", "--baseline", "transe") == 0
    assert json.loads((root / "reports" / "metrics-transe.json").read_text())["config_checksum"] == checksum
    assert run(cfg_path, "predict", "--cve", "x000", "--relation", "r3", "--top", "3") == 0
    table = (root / "reports" / "predict-x000-r3.txt").read_text().splitlines()
    assert len(table) == 4 and all(ln.split()[1].startswith("z") for ln in table[1:])
    assert run(cfg_path, "stats") == 0
    assert json.loads((root / "reports" / "stats.json").read_text())["graph"]["num_triples"] > 0


def test_inductive_split_from_flags_and_transe_refusal(tmp_path, capsys):
    cfg_path = write_config(tmp_path, synthetic={"n_x": 30, "n_y": 10, "n_z": 9, "new_fraction": 0.15})
    assert run(cfg_path, "build") == 0
    assert run(cfg_path, "split", "--mode", "inductive", "--train-cutoff", "2023-01-01",
               "--test-cutoff", "2023-10-18", "--test-fraction", "0.3", "--valid-fraction", "0.1") == 0
    split = json.loads((tmp_path / "run" / "splits" / "split.json").read_text())
    assert split["mode"] == "inductive"
    capsys.readouterr()
    assert run(cfg_path, "eval", "--baseline", "transe") == 1
    assert "TransE" in capsys.readouterr().err


def test_commands_report_missing_prerequisites(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert run(cfg_path, "train") == 1
    assert "error:" in capsys.readouterr().err
    assert run(cfg_path, "stats") == 1


def test_eval_refuses_checkpoint_from_another_graph(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    for step in ("build", "split", "train"):
        assert run(cfg_path, step) == 0
    assert run(cfg_path, "split", "--valid-fraction", "0.2") == 0  # different training graph
    capsys.readouterr()
    assert run(cfg_path, "eval") == 1
    assert "different graph" in capsys.readouterr().err
    assert run(cfg_path, "eval", "--force") == 0


def test_nvd_offline_ingest_build_stats(tmp_path, capsys):
    p = tmp_path / "nvd.yaml"
    p.write_text("source: nvd\nmode: live\n")
    assert run(p, "--offline", "ingest") == 0
    assert (tmp_path / "run" / "cache" / "nvd" / "manifest.json").exists()
    assert run(p, "--offline", "build") == 0
    build = json.loads((tmp_path / "run" / "graph" / "build.json").read_text())
    assert build["report"]["unknown_cwes"]
    capsys.readouterr()
    assert run(p, "--offline", "stats") == 0
    stats = json.loads((tmp_path / "run" / "reports" / "stats.json").read_text())
    assert stats["graph"]["num_entities"] == 609
    for row in stats["cpe_delay"].values():
        pct = [row[k] for k in ("1", "7", "30", "180")]
        assert all(a >= b for a, b in zip(pct, pct[1:]))
    assert run(p, "--offline", "predict", "--cve", "CVE-2023-4863", "--relation", "matchingCWE") == 1


def test_relative_paths_resolve_against_config_dir(tmp_path, monkeypatch):
    sub = tmp_path / "cfg"
    sub.mkdir()
    cfg_path = write_config(sub, paths={"graph": "out/g"})
    monkeypatch.chdir(tmp_path)
    assert run(cfg_path, "build") == 0
    assert (sub / "out" / "g" / "manifest").exists()


@pytest.mark.parametrize("name", ["synthetic.yaml", "nvd.yaml"])
def test_demo_configs_are_valid(name):
    from pathlib import Path
    cfg = cli.parse_config(Path(__file__).resolve().parents[1] / "demos" / name)
    assert cfg.train.dim == 16
