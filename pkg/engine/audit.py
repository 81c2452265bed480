"""RDC violation audit: exact input-gradients of a model, sign-tested per sample."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import AUDIT_COLUMNS, AUDIT_DEFAULTS, Constraint
from domain import Sample, SampleBatch
from errors import ValidationError
from models.base import Controller

LOG = logging.getLogger(__name__)

CONSTRAINTS = (Constraint.SPEED, Constraint.SPACING, Constraint.RELATIVE_SPEED)


@dataclass(frozen=True, eq=False)
class RdcReport:
    gradients: np.ndarray       # (N, 3): da/dv, da/ds, da/dr
    flags: np.ndarray           # (N, 3) bool, same column order
    tolerance: float
    model: str = ""

    def __len__(self) -> int:
        return len(self.gradients)

    @property
    def counts(self) -> Dict[str, int]:
        return {c.value: int(self.flags[:, j].sum()) for j, c in enumerate(CONSTRAINTS)}

    @property
    def rates(self) -> Dict[str, float]:
        n = len(self)
        return {name: count / n for name, count in self.counts.items()}

    @property
    def total_violations(self) -> int:
        return sum(self.counts.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "idx": np.arange(len(self)),
            "dv": self.gradients[:, 0],
            "ds": self.gradients[:, 1],
            "dr": self.gradients[:, 2],
            "viol_speed": self.flags[:, 0],
            "viol_spacing": self.flags[:, 1],
            "viol_rel": self.flags[:, 2],
        }, columns=AUDIT_COLUMNS)

    def summary(self) -> Dict:
        return {
            "model": self.model,
            "samples": len(self),
            "tolerance": self.tolerance,
            "counts": self.counts,
            "rates": self.rates,
            "gradient_min": dict(zip(("dv", "ds", "dr"), self.gradients.min(axis=0).tolist())),
            "gradient_max": dict(zip(("dv", "ds", "dr"), self.gradients.max(axis=0).tolist())),
        }


def flag_violations(gradients: np.ndarray, tolerance: float) -> np.ndarray:
    """dv > tol, ds < -tol, dr < -tol."""
    g = np.asarray(gradients, dtype=float)
    return np.column_stack([g[:, 0] > tolerance, g[:, 1] < -tolerance, g[:, 2] < -tolerance])


def _audit_batch(model: Controller, batch: SampleBatch, tolerance: float, chunk_size: int) -> RdcReport:
    if tolerance < 0:
        raise ValidationError(f"tolerance must be >= 0, got {tolerance}")
    parts = [model.rdc_gradients(batch.take(slice(i, i + chunk_size))) for i in range(0, len(batch), chunk_size)]
    gradients = np.vstack(parts)
    report = RdcReport(gradients, flag_violations(gradients, tolerance), float(tolerance), model.name)
    LOG.info("%s audit over %d states: %s", model.name, len(report), report.counts)
    return report


def audit_model(
    model: Controller,
    samples: Sequence[Sample],
    tolerance: float = AUDIT_DEFAULTS["tolerance"],
    chunk_size: int = AUDIT_DEFAULTS["chunk_size"],
) -> RdcReport:
    if not samples:
        raise ValidationError("cannot audit an empty sample set")
    batch = SampleBatch.from_samples(samples)
    if batch.seq.shape[1] != model.seq_len:
        batch = _fit_window(batch, model.seq_len)
    return _audit_batch(model, batch, tolerance, chunk_size)


def _fit_window(batch: SampleBatch, seq_len: int) -> SampleBatch:
    T = batch.seq.shape[1]
    if T >= seq_len:
        seq = batch.seq[:, T - seq_len:, :]
    else:
        seq = np.concatenate([np.repeat(batch.seq[:, :1, :], seq_len - T, axis=1), batch.seq], axis=1)
    return SampleBatch(seq, batch.phy, batch.target)


def audit_grid(
    model: Controller,
    spacing: Tuple[float, float],
    relative_speed: Tuple[float, float],
    speed: Tuple[float, float],
    n: int = AUDIT_DEFAULTS["grid_points"],
    tolerance: float = AUDIT_DEFAULTS["tolerance"],
    chunk_size: int = AUDIT_DEFAULTS["chunk_size"],
) -> RdcReport:
    """Audit on an n x n x n grid of states, each with a constant history window."""
    if n < 1:
        raise ValidationError(f"grid needs n >= 1 points per axis, got {n}")
    axes = [np.linspace(lo, hi, n) for lo, hi in (spacing, relative_speed, speed)]
    if np.any(axes[0] <= 0) or np.any(axes[2] < 0):
        raise ValidationError("grid spacing must be > 0 and speed >= 0")
    s, r, v = np.meshgrid(*axes, indexing="ij")
    states = np.column_stack([s.ravel(), r.ravel(), v.ravel()])
    seq = np.repeat(states[:, None, :], model.seq_len, axis=1)
    batch = SampleBatch(seq, states, np.zeros(len(states)))
    return _audit_batch(model, batch, tolerance, chunk_size)


def write_report(report: RdcReport, out_dir: Union[str, Path], name: str, extra: Dict = None) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"audit_{name}.json"
    csv_path = out_dir / f"audit_{name}.csv"
    summary = report.summary()
    if extra:
        summary.update(extra)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    report.to_frame().to_csv(csv_path, index=False)
    return json_path, csv_path
