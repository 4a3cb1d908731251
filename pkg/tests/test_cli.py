import hashlib
import json
import re

import pytest

from crlkit.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main
from crlkit.discovery import CSV_COLUMNS, read_discovery_csv
from crlkit.dodag import DoDag, EdgeSpec, NodeSpec
from crlkit.pipeline import CONFIG_ENV, ConfigError, RunConfig, RunPaths, resolve_config

FAST = {"years": 5, "seed": 42, "ae_epochs": 2, "effect_iterations": 3, "finetune_iterations": 3,
        "window": 10, "effect_hidden": 8, "hidden": 16}


def digest(root, pattern="*"):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob(pattern)) if p.is_file()}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One fast hydrology run shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.json"
    cfg.write_text(json.dumps({**FAST, "runs_dir": str(root / "runs"), "name": "fast"}))
    args = ["--config", str(cfg)]
    assert main(["generate", *args]) == EXIT_OK
    assert main(["train-ae", "--node", "all", *args]) == EXIT_OK
    for c in "CDE":
        assert main(["train-effect", "--cause", c, "--result", "G", *args]) == EXIT_OK
    return args, RunPaths(root / "runs" / "fast")


def test_generate_writes_node_files(run):
    _, paths = run
    csvs = sorted(p.name for p in paths.data.glob("*.csv") if not p.name.endswith(".mask.csv"))
    assert csvs == [f"{n}.csv" for n in "ABCDEFGHIJ"]
    assert (paths.data / "manifest.json").is_file() and (paths.root / "config.json").is_file()


def test_generate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--years", "2", "--seed", "42", "--name", name,
                     "--runs-dir", str(tmp_path)]) == EXIT_OK
    a, b = digest(tmp_path / "a" / "data"), digest(tmp_path / "b" / "data")
    assert a == b and len(a) == 22


def test_train_ae_writes_checkpoints_and_rows(run):
    _, paths = run
    assert sorted(p.name for p in paths.models.glob("*.ae.ckpt")) == [f"{n}.ae.ckpt" for n in "ABCDEFGHIJ"]
    header, *rows = (paths.reports / "reconstruction.csv").read_text().splitlines()
    assert len(rows) == 10
    assert {"rmse_scaled", "rmse_original", "bce_mask"} <= set(header.split(","))


def test_train_single_node_upserts_row(run, tmp_path):
    args, paths = run
    assert main(["train-ae", "--node", "J", *args]) == EXIT_OK
    rows = (paths.reports / "reconstruction.csv").read_text().splitlines()[1:]
    assert len(rows) == 10 and sum(r.startswith("J,") for r in rows) == 1


def test_invalid_node_is_config_error(run, capsys):
    args, _ = run
    assert main(["train-ae", "--node", "Q", *args]) == EXIT_CONFIG
    assert "Q" in capsys.readouterr().err


def test_missing_graph_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["generate", "--graph", str(missing), "--runs-dir", str(tmp_path)]) == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_missing_prerequisites_exit_4(tmp_path, capsys):
    assert main(["train-ae", "--node", "A", "--runs-dir", str(tmp_path)]) == EXIT_MISSING
    assert "manifest.json" in capsys.readouterr().err
    assert main(["generate", "--years", "1", "--runs-dir", str(tmp_path)]) == EXIT_OK
    assert main(["train-effect", "--cause", "A", "--result", "C", "--runs-dir", str(tmp_path)]) == EXIT_MISSING
    assert "A.ae.ckpt" in capsys.readouterr().err
    assert main(["discover", "--runs-dir", str(tmp_path)]) == EXIT_MISSING


def test_dry_run_trains_nothing(tmp_path, capsys):
    assert main(["generate", "--years", "1", "--runs-dir", str(tmp_path), "--dry-run"]) == EXIT_OK
    assert not (tmp_path / "default").exists()
    assert "dry run ok" in capsys.readouterr().out


def test_fges_is_unavailable(capsys):
    assert main(["fges"]) == EXIT_CONFIG
    assert "not implemented" in capsys.readouterr().err


def test_custom_graph_run(tmp_path):
    g = DoDag([NodeSpec("X", 1), NodeSpec("Y", 2), NodeSpec("Z", 1)],
              [EdgeSpec("X", "Y", 1), EdgeSpec("Y", "Z", 2)])
    gf = g.save(tmp_path / "g.json")
    common = ["--graph", str(gf), "--runs-dir", str(tmp_path)]
    assert main(["generate", "--years", "1", *common]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "default" / "data").glob("?.csv")) == ["X.csv", "Y.csv", "Z.csv"]
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": []')
    assert main(["generate", "--graph", str(bad), "--runs-dir", str(tmp_path)]) == EXIT_CONFIG


def test_train_effect_rows_and_checkpoints(run):
    _, paths = run
    for c in "CDE":
        assert paths.effect((c,), "G").is_file()
    text = (paths.reports / "effects.csv").read_text()
    assert sum(line.startswith(("C=>G", "D=>G", "E=>G")) for line in text.splitlines()) == 3


def test_stack_writes_chain_and_nse_row(run, capsys):
    args, paths = run
    assert main(["stack", "--chain", "B,E,F,I,J", *args]) == EXIT_OK
    out = capsys.readouterr().out
    assert "B=>E=>F=>I=>J: nse=" in out and out.count("junction") == 3
    chain_dir = paths.chain(list("BEFIJ"))
    assert (chain_dir / "chain.json").is_file() and len(list(chain_dir.glob("*.effect.ckpt"))) == 4
    assert "B=>E=>F=>I=>J" in (paths.reports / "effects.csv").read_text()


def test_report_node_svg(run):
    args, paths = run
    assert main(["report", "--node", "G", "--year", "3", *args]) == EXIT_OK
    svg = (paths.reports / "plots" / "G_year3.svg").read_text()
    names = set(re.findall(r'class="series" data-name="([^"]+)"', svg))
    assert {"observed", "autoencoder"} <= names and len(names) >= 3
    legends = re.findall(r'<text class="legend"[^>]*>([^<]*)</text>', svg)
    assert len(legends) == len(names) and sum("NSE" in t for t in legends) >= 3
    assert (paths.reports / "reconstruction_table.csv").is_file()
    assert (paths.reports / "effect_table.csv").is_file()


def test_discover_csv_and_determinism(run, tmp_path):
    args, paths = run
    assert main(["discover", "--mode", "ordering", *args]) == EXIT_OK
    rows = read_discovery_csv(paths.reports / "discovery.csv")
    assert list(rows[0]) == list(CSV_COLUMNS) and len(rows) == 16
    first = digest(paths.reports, "discovery.csv")
    assert main(["discover", *args]) == EXIT_OK
    assert digest(paths.reports, "discovery.csv") == first


def test_config_rules(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"years": 3, "colour": "red"}))
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.load(p)
    p.write_text(json.dumps({"years": 3}))
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert resolve_config().years == 3
    assert resolve_config(None).with_overrides(years=None, seed=9).seed == 9
    monkeypatch.delenv(CONFIG_ENV)
    assert resolve_config() == RunConfig()
    with pytest.raises(ConfigError):
        RunConfig(mode="sideways")
    assert main(["generate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
