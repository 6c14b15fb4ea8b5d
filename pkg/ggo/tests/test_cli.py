from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from ggo.cli import main
from ggo.schemas.labels import SEVERITY_LABELS

SUBCOMMANDS = ("manifest", "preview", "train", "grid", "eval", "retrain-final", "synth")


def _run(*argv: str, results: Path) -> int:
    return main([*argv, "--results-root", str(results), "--log-level", "WARNING"])


def _error_line(stderr: str) -> dict:
    (line,) = [ln for ln in stderr.splitlines() if ln.startswith('{"error"')]
    return json.loads(line)


@pytest.fixture
def synth_root(tmp_path, capsys) -> Path:
    data = tmp_path / "data"
    code = _run("synth", "--tiny", "--out", str(data), "--n-per-class", "2", "--slices", "5", "--side", "64", results=tmp_path)
    assert code == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["train"] == 8
    return data


def test_help_documents_every_subcommand(capsys):
    for command in SUBCOMMANDS:
        assert main([command, "--help"]) == 0
        assert "--results-root" in capsys.readouterr().out


def test_usage_errors_exit_two(tmp_path):
    assert _run("synth", "--out", str(tmp_path), "--bogus", results=tmp_path) == 2
    assert _run("train", "--data", str(tmp_path), "--extent", "sideways", results=tmp_path) == 2
    assert main(["teleport"]) == 2


def test_synth_writes_a_verified_manifest(synth_root, tmp_path, capsys):
    assert (synth_root / "manifest.csv").is_file()
    assert _run("manifest", "--root", str(synth_root), "--verify", str(synth_root / "manifest.csv"), results=tmp_path) == 0
    assert capsys.readouterr().out.strip().endswith("0 discrepancies")

    victim = sorted((synth_root / "train").iterdir())[0]
    sorted(victim.iterdir())[-1].unlink()
    assert _run("manifest", "--root", str(synth_root), "--verify", str(synth_root / "manifest.csv"), results=tmp_path) == 1
    assert "1 discrepancies" in capsys.readouterr().out


def test_runtime_errors_are_one_json_line(tmp_path, capsys):
    assert _run("grid", "--data", str(tmp_path / "absent"), results=tmp_path) == 1
    error = _error_line(capsys.readouterr().err)
    assert error["error"] == "ConfigError"
    assert "absent" in error["message"]


def test_train_echoes_settings_into_run_dir(synth_root, tmp_path, capsys, stub_zoo):
    code = _run(
        "train", "--data", str(synth_root), "--arch", "ResNet152", "--init", "scratch",
        "--extent", "all", "--bs", "16", "--opt", "adam", "--lr", "0.001", "--max-epochs", "1",
        results=tmp_path,
    )
    assert code == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["settings"] == "BS16 ADAM LR0.001"

    run_dir = Path(echoed["run_dir"])
    assert run_dir.name.startswith("ResNet152-all_layers-bs16-adam-lr0.001-")
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    assert config["settings"] == "BS16 ADAM LR0.001"
    assert config["train_config"]["max_epochs"] == 1
    record = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    assert record["command"] == "train" and record["exit_code"] == 0


def test_config_file_sits_below_flags(synth_root, tmp_path, capsys, stub_zoo):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"arch": "SqueezeNet", "init": "scratch", "batch_size": 8, "lr": 0.01, "max_epochs": 1}))
    assert _run("train", "--data", str(synth_root), "--config", str(config), "--lr", "0.001", results=tmp_path) == 0
    assert json.loads(capsys.readouterr().out)["settings"] == "BS8 ADAM LR0.001"


def test_end_to_end_pipeline(synth_root, tmp_path, capsys, stub_zoo):
    grid = tmp_path / "grid.json"
    grid.write_text(
        json.dumps(
            {
                "archs": ["SqueezeNet"],
                "extents": ["all"],
                "batch_sizes": [4],
                "optim_lr_pairs": [["adam", 0.001]],
                "max_epochs": 2,
            }
        )
    )
    assert _run("grid", "--data", str(synth_root), "--grid", str(grid), "--init", "scratch", results=tmp_path) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert (echoed["cells"], echoed["executed"], echoed["failed"]) == (1, 1, [])
    assert (tmp_path / "results" / "summary.csv").is_file()
    assert (tmp_path / "results" / "grid.json").is_file()

    assert _run("grid", "--data", str(synth_root), "--grid", str(grid), "--init", "scratch", results=tmp_path) == 0
    assert json.loads(capsys.readouterr().out)["executed"] == 0

    assert _run("retrain-final", "--data", str(synth_root), results=tmp_path) == 0
    final = json.loads(capsys.readouterr().out)
    predictions = pd.read_csv(final["predictions"])
    assert len(predictions) == 8
    assert set(predictions["severity"]) <= set(SEVERITY_LABELS)

    assert _run("eval", "--layout", "table2", results=tmp_path) == 0
    table = capsys.readouterr().out
    assert table.startswith("Fine-tuning extent: all layers")
    assert "BS4 ADAM LR0.001" in table

    (run_dir,) = [p for p in (tmp_path / "runs").iterdir() if p.name.startswith("SqueezeNet")]
    checkpoint = str(run_dir / "best.ckpt")
    assert _run("eval", "--checkpoint", checkpoint, "--data", str(synth_root), "--split", "test", results=tmp_path) == 0
    assert sum(json.loads(capsys.readouterr().out)["distribution"]) == 8
    assert _run("eval", "--checkpoint", checkpoint, "--data", str(synth_root), results=tmp_path) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 8

    records = (tmp_path / "run_records.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["command"] for line in records] == [
        "synth", "grid", "grid", "retrain-final", "eval", "eval", "eval",
    ]


def test_preview_writes_a_png(synth_root, tmp_path, capsys):
    scan_id = sorted(p.name for p in (synth_root / "train").iterdir())[0]
    out = tmp_path / "previews"
    assert _run("preview", "--data", str(synth_root), "--scan-id", scan_id, "--arch", "AlexNet", "--out", str(out), results=tmp_path) == 0
    assert len(list(out.glob(f"{scan_id}_z*.png"))) == 1
