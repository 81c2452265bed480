"""Aggregate rollout and audit outputs of a run directory into RMSE / violation tables."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from config import Constraint

LOG = logging.getLogger(__name__)

METRICS = [
    ("rmse_accel", "Acceleration RMSE (m/s^2)"),
    ("rmse_speed", "Speed RMSE (m/s)"),
    ("rmse_spacing", "Spacing RMSE (m)"),
]
CRASH_LABEL = "N/A (crash)"


def discover_models(run_dir: Union[str, Path]) -> List[str]:
    """Model names that have a rollout summary in the run directory, sorted."""
    return sorted(p.stem[len("rollout_"):] for p in Path(run_dir).glob("rollout_*.json"))


def _read_json(path: Path) -> Optional[Dict]:
    return json.loads(path.read_text()) if path.exists() else None


def collect(run_dir: Union[str, Path], models: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """One row per model: rollout RMSEs, crash info, open-loop RMSE and RDC violation rates."""
    run_dir = Path(run_dir)
    models = list(models) if models else discover_models(run_dir)
    rows = []
    for name in models:
        rollout = _read_json(run_dir / f"rollout_{name}.json")
        audit = _read_json(run_dir / f"audit_{name}.json")
        if rollout is None and audit is None:
            LOG.warning("no rollout or audit output for %s in %s", name, run_dir)
            continue
        row = {"model": name}
        if rollout:
            row.update({k: rollout.get(k) for k, _ in METRICS})
            row["crashed"] = rollout.get("crashed", False)
            row["crash_time"] = rollout.get("crash_time")
            row["prediction_rmse"] = rollout.get("prediction_rmse")
        if audit:
            for c in Constraint:
                row[f"viol_{c.value}"] = audit["rates"].get(c.value)
        rows.append(row)
    return pd.DataFrame(rows)


def _fmt(value, crashed: bool) -> str:
    if crashed:
        return CRASH_LABEL
    if value is None or pd.isna(value):
        return "-"
    return f"{value:.3f}"


def render_markdown(table: pd.DataFrame) -> str:
    """Metrics as rows and models as columns, followed by the violation-rate table."""
    if table.empty:
        return "# Run report\n\nNo model outputs found.\n"
    models = table["model"].tolist()
    crashed = dict(zip(models, table.get("crashed", pd.Series([False] * len(models))).fillna(False)))
    lines = ["# Run report", "", "## Closed-loop rollout", ""]
    lines.append("| Metric | " + " | ".join(models) + " |")
    lines.append("|---" * (len(models) + 1) + "|")
    for key, label in METRICS:
        values = table[key] if key in table else [None] * len(models)
        lines.append(f"| {label} | " + " | ".join(_fmt(v, bool(crashed[m])) for m, v in zip(models, values)) + " |")
    if "prediction_rmse" in table:
        lines.append("| Open-loop acceleration RMSE (m/s^2) | "
                     + " | ".join(_fmt(v, False) for v in table["prediction_rmse"]) + " |")

    viol_cols = [f"viol_{c.value}" for c in Constraint if f"viol_{c.value}" in table]
    if viol_cols:
        lines += ["", "## RDC violation rates", ""]
        lines.append("| Constraint | " + " | ".join(models) + " |")
        lines.append("|---" * (len(models) + 1) + "|")
        for col in viol_cols:
            cells = ["-" if v is None or pd.isna(v) else f"{100.0 * v:.1f}%" for v in table[col]]
            lines.append(f"| {col[len('viol_'):]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(run_dir: Union[str, Path], models: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    run_dir = Path(run_dir)
    table = collect(run_dir, models)
    csv_path, md_path = run_dir / "report.csv", run_dir / "report.md"
    table.to_csv(csv_path, index=False)
    md_path.write_text(render_markdown(table))
    LOG.info("report over %d models written to %s", len(table), md_path)
    return {"csv": csv_path, "markdown": md_path}
