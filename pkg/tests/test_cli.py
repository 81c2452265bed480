"""Command-line surface: option precedence, exit codes and an end-to-end run."""

import json

import pandas as pd
import pytest

from config import TRAIN_DEFAULTS
from main import EXIT_OK, EXIT_VALIDATION, build_parser, main, resolve


@pytest.fixture
def generated(tmp_path):
    assert main(["--out", str(tmp_path), "gen", "--duration", "60"]) == EXIT_OK
    return tmp_path


def test_gen_writes_trajectory_and_manifest(generated):
    frame = pd.read_csv(generated / "trajectory.csv")
    assert list(frame.columns) == ["t", "lead_speed", "follow_speed", "spacing"]
    assert len(frame) == 600
    manifest = json.loads((generated / "gen_manifest.json").read_text())
    assert manifest["config"]["command"] == "gen"
    assert len(manifest["config_hash"]) == 64
    assert manifest["scenario"]["kind"] == "oscillatory"


def test_same_options_same_config_hash(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["--out", str(out), "gen", "--duration", "30"]) == EXIT_OK
    first = json.loads((a / "gen_manifest.json").read_text())
    second = json.loads((b / "gen_manifest.json").read_text())
    assert first["config_hash"] == second["config_hash"]


def test_unknown_kind_is_a_validation_error(tmp_path):
    assert main(["--out", str(tmp_path), "gen", "--kind", "sawtooth"]) == EXIT_VALIDATION


def test_missing_trajectory_is_a_validation_error(tmp_path):
    assert main(["--out", str(tmp_path), "calibrate"]) == EXIT_VALIDATION


def test_unknown_config_key_is_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"bogus": 1}}))
    assert main(["--out", str(tmp_path), "--config", str(cfg), "gen"]) == EXIT_VALIDATION


def test_unknown_model_is_a_validation_error(generated):
    assert main(["--out", str(generated), "train", "--model", "gpt"]) == EXIT_VALIDATION


def test_flags_beat_config_file_beat_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "train": {"epochs": 3, "lr": 0.01}}))
    args = build_parser().parse_args(["--config", str(cfg), "train", "--epochs", "7"])
    run, log_level = resolve(args)
    assert run.options["epochs"] == 7
    assert run.options["lr"] == 0.01
    assert run.options["batch_size"] == TRAIN_DEFAULTS["batch_size"]
    assert run.seed == 5
    assert log_level == "INFO"


def test_ovrv_pipeline_end_to_end(generated):
    out = str(generated)
    assert main(["--out", out, "calibrate", "--budget", "300"]) == EXIT_OK
    assert (generated / "ovrv.json").exists()
    splits = json.loads((generated / "splits" / "manifest.json").read_text())
    assert set(splits["rows"]) == {"train", "validation", "test"}

    assert main(["--out", out, "simulate", "--model", "ovrv"]) == EXIT_OK
    summary = json.loads((generated / "rollout_ovrv.json").read_text())
    assert summary["crashed"] is False and summary["segment"] == "test"
    assert summary["prediction_rmse"] >= 0.0

    assert main(["--out", out, "audit", "--model", "ovrv"]) == EXIT_OK
    audit = json.loads((generated / "audit_ovrv.json").read_text())
    assert audit["counts"] == {"rel": 0, "spacing": 0, "speed": 0}

    assert main(["--out", out, "report"]) == EXIT_OK
    assert "ovrv" in (generated / "report.md").read_text()
    assert (generated / "report_manifest.json").exists()


def test_tiny_training_run(generated):
    out = str(generated)
    argv = ["--out", out, "train", "--model", "nn", "--epochs", "2", "--lstm-layers", "1", "--lstm-units", "4"]
    assert main(argv) == EXIT_OK
    for name in ("nn.json", "nn.bin", "history_nn.csv", "train_nn_manifest.json"):
        assert (generated / name).exists()
    history = pd.read_csv(generated / "history_nn.csv")
    assert len(history) == 2


def test_simulate_without_checkpoint_fails(generated):
    assert main(["--out", str(generated), "simulate", "--model", "racer"]) == EXIT_VALIDATION


@pytest.mark.parametrize("argv", [
    ["--seed", "abc", "gen"],
    ["--log-level", "LOUD", "gen"],
    ["gen", "--duration", "soon"],
    ["fly"],
])
def test_malformed_command_line_is_a_validation_error(tmp_path, argv):
    assert main(["--out", str(tmp_path)] + argv) == EXIT_VALIDATION


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_pinn_selects_alpha_unless_fixed():
    run, _ = resolve(build_parser().parse_args(["train", "--model", "pinn"]))
    assert run.options["select_alpha"] is True
    run, _ = resolve(build_parser().parse_args(["train", "--model", "pinn", "--fixed-alpha", "--alpha", "0.3"]))
    assert run.options["select_alpha"] is False
    assert run.options["alpha"] == 0.3
