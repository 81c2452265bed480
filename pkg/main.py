"""
Command-line entry point.

    python main.py [--seed N] [--out DIR] [--config FILE] <command> [options]

Commands: gen, calibrate, train, simulate, audit, report. Option values come
from flags first, then the JSON config file, then config.py defaults.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy

import report
from config import (
    CALIBRATION_PARAMS, DATA_DEFAULTS, NETWORK_DEFAULTS, SCENARIO_DEFAULTS, TRAIN_DEFAULTS,
    AUDIT_DEFAULTS, ModelKind,
)
from datagen import ScenarioSpec, generate
from domain import (
    DatasetSplit, build_samples, held_out_segment, read_trajectory, split_dataset,
    write_split_segments, write_trajectory,
)
from engine.audit import audit_grid, audit_model, write_report
from engine.losses import RdcWeights
from engine.simulation import evaluate_prediction, rollout, write_rollout
from engine.training import TrainConfig, select_alpha, train_model
from errors import CarFollowingError, ValidationError
from models.base import Controller
from models.neural import NetworkConfig, RacerNet
from models.ovrv import OvrvController, OvrvParams, calibrate_ovrv_detailed

LOG = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

GLOBAL_DEFAULTS = {"seed": 0, "out": "runs", "log_level": "INFO"}

_DATASET_DEFAULTS = {
    "data": None,                   # <out>/trajectory.csv
    "seq_len": DATA_DEFAULTS["seq_len"],
    "accel_window": DATA_DEFAULTS["accel_window"],
    "ratios": list(DATA_DEFAULTS["split_ratios"]),
}

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "gen": {
        "kind": "oscillatory",
        "duration": SCENARIO_DEFAULTS["duration"],
        "dt": DATA_DEFAULTS["dt"],
        "noise_std": SCENARIO_DEFAULTS["noise_std"],
        "setting": SCENARIO_DEFAULTS["setting"].value,
        "speed_range": None,
        "initial_spacing": None,
        "params": None,
    },
    "calibrate": {
        **_DATASET_DEFAULTS,
        "budget": CALIBRATION_PARAMS["budget"],
        "init": list(CALIBRATION_PARAMS["init"]),
    },
    "train": {
        **_DATASET_DEFAULTS,
        "model": ModelKind.RACER.value,
        "name": None,               # model kind
        "ovrv": None,               # <out>/ovrv.json, PINN only
        "epochs": TRAIN_DEFAULTS["max_epochs"],
        "lr": TRAIN_DEFAULTS["learning_rate"],
        "batch_size": TRAIN_DEFAULTS["batch_size"],
        "patience": TRAIN_DEFAULTS["patience"],
        "lambdas": list(TRAIN_DEFAULTS["rdc_weights"]),
        "alpha": TRAIN_DEFAULTS["alpha"],
        "select_alpha": True,       # PINN only; --fixed-alpha keeps "alpha"
        "lstm_layers": NETWORK_DEFAULTS["lstm_layers"],
        "lstm_units": NETWORK_DEFAULTS["lstm_units"],
    },
    "simulate": {
        **_DATASET_DEFAULTS,
        "model": ModelKind.RACER.value,
        "segment": "test",
    },
    "audit": {
        **_DATASET_DEFAULTS,
        "model": ModelKind.RACER.value,
        "split": "test",
        "tolerance": AUDIT_DEFAULTS["tolerance"],
        "grid": False,
    },
    "report": {"models": None},
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    out: Path
    seed: int
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMAND_DEFAULTS:
            raise ValidationError(f"unknown command {self.command!r}")

    def canonical(self) -> Dict[str, Any]:
        return {"command": self.command, "seed": self.seed, "options": self.options}

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def path(self, key: str, default_name: str) -> Path:
        value = self.options.get(key)
        return Path(value) if value else self.out / default_name


def versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(run: RunConfig, filename: str, extra: Optional[Dict] = None) -> Path:
    manifest = {
        "config": run.canonical(),
        "config_hash": run.config_hash(),
        "versions": versions(),
        **(extra or {}),
    }
    path = run.out / filename
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ─── Argument parsing ───

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Random seed (default 0)")
    common.add_argument("--out", "-o", default=argparse.SUPPRESS, help="Run directory (default runs/)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option values")
    common.add_argument("--log-level", dest="log_level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="main.py", description="Car-following model toolkit", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_args(p):
        p.add_argument("--data", help="Trajectory CSV (default <out>/trajectory.csv)")
        p.add_argument("--seq-len", dest="seq_len", type=int)
        p.add_argument("--accel-window", dest="accel_window", type=float,
                       help="Acceleration estimation window in seconds (0.5 for the smoothed protocol)")
        p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    p = sub.add_parser("gen", parents=[common], help="Generate a synthetic scenario")
    p.add_argument("--kind", help="oscillatory | low_speed_steps | high_speed_steps | dips")
    p.add_argument("--duration", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--setting", help="min_gap | max_gap ground-truth preset")
    p.add_argument("--speed-range", dest="speed_range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--initial-spacing", dest="initial_spacing", type=float)
    p.add_argument("--params", type=float, nargs=4, metavar=("K1", "K2", "TAU", "ETA"))

    p = sub.add_parser("calibrate", parents=[common], help="Calibrate OVRV on the training split")
    dataset_args(p)
    p.add_argument("--budget", type=int)
    p.add_argument("--init", type=float, nargs=4, metavar=("K1", "K2", "TAU", "ETA"))

    p = sub.add_parser("train", parents=[common], help="Train an NN, PINN or RACER model")
    dataset_args(p)
    p.add_argument("--model", help="nn | pinn | racer")
    p.add_argument("--name")
    p.add_argument("--ovrv", help="Calibrated OVRV JSON for PINN (default <out>/ovrv.json)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lambdas", type=float, nargs=3, metavar=("L1", "L2", "L3"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--select-alpha", dest="select_alpha", action="store_true", default=None,
                   help="PINN: choose alpha on the validation split (default)")
    p.add_argument("--fixed-alpha", dest="select_alpha", action="store_false", default=None,
                   help="PINN: train once with --alpha")
    p.add_argument("--lstm-layers", dest="lstm_layers", type=int)
    p.add_argument("--lstm-units", dest="lstm_units", type=int)

    p = sub.add_parser("simulate", parents=[common], help="Closed-loop rollout of a model")
    dataset_args(p)
    p.add_argument("--model", help="ovrv or a trained model name")
    p.add_argument("--segment", help="test | full")

    p = sub.add_parser("audit", parents=[common], help="RDC violation audit of a model")
    dataset_args(p)
    p.add_argument("--model", help="ovrv or a trained model name")
    p.add_argument("--split", help="train | validation | test")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--grid", action="store_true", default=None, help="Also audit a dense state grid")

    p = sub.add_parser("report", parents=[common], help="Summarise rollouts and audits")
    p.add_argument("--models", nargs="+")
    return parser


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config: file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: {p} is not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"config: {p} must hold a JSON object")
    return data


def resolve(args: argparse.Namespace) -> Tuple[RunConfig, str]:
    """Flags win over the config file, which wins over defaults."""
    command = args.command
    file_cfg = load_config_file(getattr(args, "config", None))
    # a per-command section may sit under the command's name
    section = file_cfg.get(command, {})
    flat = {k: v for k, v in file_cfg.items() if k not in COMMAND_DEFAULTS}
    merged_file = {**flat, **section}
    allowed = set(COMMAND_DEFAULTS[command]) | set(GLOBAL_DEFAULTS)
    unknown = sorted(k for k in merged_file if k not in allowed)
    if unknown:
        raise ValidationError(f"config: unknown option(s) for {command}: {', '.join(unknown)}")

    values = {**GLOBAL_DEFAULTS, **COMMAND_DEFAULTS[command]}
    values.update(merged_file)
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    options = {k: values[k] for k in COMMAND_DEFAULTS[command]}
    run = RunConfig(command=command, out=Path(values["out"]), seed=int(values["seed"]), options=options)
    return run, str(values["log_level"])


# ─── Shared helpers ───

def _trajectory_path(run: RunConfig) -> Path:
    return run.path("data", "trajectory.csv")


def _load_split(run: RunConfig):
    o = run.options
    traj = read_trajectory(_trajectory_path(run))
    samples = build_samples(traj, int(o["seq_len"]), float(o["accel_window"]))
    split = split_dataset(samples, o["ratios"], run.seed)
    return traj, split


def _load_controller(run: RunConfig, name: str) -> Controller:
    if name == ModelKind.OVRV.value:
        return OvrvController.load(run.out / "ovrv.json")
    return RacerNet.load(run.out / name)


def _samples_of(split: DatasetSplit, part: str):
    if part not in ("train", "validation", "test"):
        raise ValidationError(f"split: unknown value {part!r} (expected train, validation or test)")
    return getattr(split, part)


# ─── Commands ───

def cmd_gen(run: RunConfig) -> Dict[str, Path]:
    o = run.options
    spec = ScenarioSpec(
        kind=o["kind"],
        duration=float(o["duration"]),
        dt=float(o["dt"]),
        speed_range=tuple(o["speed_range"]) if o["speed_range"] else None,
        noise_std=float(o["noise_std"]),
        seed=run.seed,
        setting=o["setting"],
        params=OvrvParams.from_sequence(o["params"]) if o["params"] else None,
        initial_spacing=o["initial_spacing"],
    )
    traj, manifest = generate(spec)
    csv_path = write_trajectory(traj, run.out / "trajectory.csv")
    manifest_path = write_manifest(run, "gen_manifest.json", manifest)
    return {"trajectory": csv_path, "manifest": manifest_path}


def cmd_calibrate(run: RunConfig) -> Dict[str, Path]:
    o = run.options
    traj, split = _load_split(run)
    result = calibrate_ovrv_detailed(split, OvrvParams.from_sequence(o["init"]), int(o["budget"]))
    params_path = OvrvController(result.params).save(run.out / "ovrv.json")
    splits = write_split_segments(traj, run.out / "splits", int(o["seq_len"]), float(o["accel_window"]),
                                  o["ratios"], run.seed)
    (run.out / "splits" / "manifest.json").write_text(json.dumps(splits, indent=2, sort_keys=True) + "\n")
    manifest_path = write_manifest(run, "calibrate_manifest.json", {"calibration": result.summary()})
    return {"params": params_path, "manifest": manifest_path}


def cmd_train(run: RunConfig) -> Dict[str, Path]:
    o = run.options
    kind = ModelKind(o["model"]) if o["model"] in [k.value for k in ModelKind] else None
    if kind is None:
        raise ValidationError(f"model: unknown value {o['model']!r} (expected nn, pinn or racer)")
    name = o["name"] or kind.value
    _, split = _load_split(run)
    cfg = TrainConfig(
        model=kind,
        learning_rate=float(o["lr"]),
        batch_size=int(o["batch_size"]),
        max_epochs=int(o["epochs"]),
        patience=int(o["patience"]),
        seed=run.seed,
        rdc_weights=RdcWeights(*o["lambdas"]) if kind is ModelKind.RACER else RdcWeights(0.0, 0.0, 0.0),
        alpha=float(o["alpha"]),
        network=NetworkConfig(lstm_layers=int(o["lstm_layers"]), lstm_units=int(o["lstm_units"]),
                              init_seed=run.seed),
    )
    ovrv = None
    if kind is ModelKind.PINN:
        ovrv = OvrvController.load(run.path("ovrv", "ovrv.json")).params
    extra: Dict[str, Any] = {"train_config": cfg.to_dict()}
    if kind is ModelKind.PINN and o["select_alpha"]:
        selection = select_alpha(split, cfg, ovrv)
        net, history = selection.net, selection.history
        extra["alpha_selected"] = selection.alpha
        extra["alpha_scores"] = {f"{a:.2f}": s for a, s in selection.scores.items()}
    else:
        net, history = train_model(split, cfg, ovrv)
    net.name = name
    json_path, bin_path = net.save(run.out / name)
    history_path = history.write_csv(run.out / f"history_{name}.csv")
    extra.update({"best_epoch": history.best_epoch, "epochs_run": len(history),
                  "stopped_early": history.stopped_early, "best_val_loss": history.best_val_loss})
    manifest_path = write_manifest(run, f"train_{name}_manifest.json", extra)
    return {"checkpoint": json_path, "parameters": bin_path, "history": history_path, "manifest": manifest_path}


def cmd_simulate(run: RunConfig) -> Dict[str, Path]:
    o = run.options
    name = o["model"]
    controller = _load_controller(run, name)
    traj, split = _load_split(run)
    if o["segment"] == "test":
        truth = held_out_segment(traj, int(o["seq_len"]), float(o["accel_window"]), o["ratios"])
    elif o["segment"] == "full":
        truth = traj
    else:
        raise ValidationError(f"segment: unknown value {o['segment']!r} (expected test or full)")
    result = rollout(controller, truth)
    extra = {"segment": o["segment"]}
    if split.test:
        extra["prediction_rmse"] = evaluate_prediction(controller, split.test)
    csv_path, json_path = write_rollout(result, truth, run.out, name, extra)
    manifest_path = write_manifest(run, f"simulate_{name}_manifest.json")
    return {"rollout": csv_path, "summary": json_path, "manifest": manifest_path}


def cmd_audit(run: RunConfig) -> Dict[str, Path]:
    o = run.options
    name = o["model"]
    controller = _load_controller(run, name)
    _, split = _load_split(run)
    samples = _samples_of(split, o["split"])
    rdc = audit_model(controller, samples, float(o["tolerance"]))
    extra = {"split": o["split"]}
    if o["grid"]:
        states = np.array([s.phy_state.as_tuple() for s in samples])
        lo, hi = states.min(axis=0), states.max(axis=0)
        grid = audit_grid(controller, (max(lo[0], 1e-3), hi[0]), (lo[1], hi[1]), (max(lo[2], 0.0), hi[2]),
                          tolerance=float(o["tolerance"]))
        extra["grid"] = grid.summary()
    json_path, csv_path = write_report(rdc, run.out, name, extra)
    manifest_path = write_manifest(run, f"audit_{name}_manifest.json")
    return {"summary": json_path, "table": csv_path, "manifest": manifest_path}


def cmd_report(run: RunConfig) -> Dict[str, Path]:
    paths = report.write_report(run.out, run.options["models"])
    paths["manifest"] = write_manifest(run, "report_manifest.json")
    return paths


COMMANDS = {
    "gen": cmd_gen,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors from argparse count as validation errors
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO, stream=sys.stdout, format="%(levelname)s [%(name)s]: %(message)s")
    try:
        run, log_level = resolve(args)
        logging.getLogger().setLevel(getattr(logging, log_level.upper(), logging.INFO))
        outputs = COMMANDS[run.command](run)
    except ValidationError as exc:
        LOG.error("%s", exc)
        return EXIT_VALIDATION
    except (CarFollowingError, OSError) as exc:
        LOG.error("%s", exc)
        return EXIT_RUNTIME
    for label, path in outputs.items():
        LOG.info("%s: %s", label, path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
