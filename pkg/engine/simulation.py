"""Closed-loop rollout: any controller drives the follower behind a recorded lead vehicle."""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import ROLLOUT_COLUMNS, SIM_DEFAULTS
from domain import Sample, SampleBatch, Trajectory
from errors import SimulationError, ValidationError
from models.base import Controller

LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimTrace:
    spacing: np.ndarray
    speed: np.ndarray
    accel: np.ndarray           # acceleration commanded at each recorded state
    crashed: bool = False
    crash_step: Optional[int] = None    # index into the lead series where s <= 0 was reached


@dataclass(frozen=True, eq=False)
class RolloutResult:
    dt: float
    start: int                  # trajectory row of the first simulated state
    lead_speed: np.ndarray
    spacing: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    crashed: bool = False
    crash_time: Optional[float] = None
    rmse: Optional[Tuple[float, float, float]] = None   # (accel, speed, spacing); None after a crash
    controller: str = ""

    def __post_init__(self):
        n = len(self.spacing)
        if len(self.speed) != n or len(self.accel) != n:
            raise ValidationError("rollout series must have equal lengths")

    def __len__(self) -> int:
        return len(self.spacing)

    @property
    def times(self) -> np.ndarray:
        return (self.start + np.arange(len(self))) * self.dt


def simulate(
    controller: Controller,
    lead_speed: Sequence[float],
    warmup: np.ndarray,
    dt: float,
    accel_noise: Optional[np.ndarray] = None,
) -> SimTrace:
    """
    Euler integration of [s, v] with the controller's acceleration:
    s += (v_lead - v) * dt, v = max(0, v + a * dt).

    `warmup` is the controller's initial window of (s, dv, v) rows; its last row
    is the starting state. A single row is repeated to fill longer windows.
    The follower's own simulated states then feed the window.
    """
    lead = np.asarray(lead_speed, dtype=float)
    if lead.ndim != 1 or len(lead) < 1:
        raise ValidationError("lead speed series must be a non-empty 1-D array")
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    window = np.atleast_2d(np.asarray(warmup, dtype=float))
    if window.shape[1] != 3:
        raise ValidationError(f"warmup rows must be (s, dv, v), got shape {window.shape}")
    L = controller.seq_len
    if len(window) == 1 and L > 1:
        window = np.repeat(window, L, axis=0)
    if len(window) != L:
        raise ValidationError(f"warmup has {len(window)} rows, controller needs {L}")
    if accel_noise is not None and len(accel_noise) < len(lead):
        raise ValidationError("accel_noise must cover every step of the lead series")

    min_speed, crash_spacing = SIM_DEFAULTS["min_speed"], SIM_DEFAULTS["crash_spacing"]
    s, v = float(window[-1, 0]), float(window[-1, 2])
    spacing, speed, accel = [s], [v], []
    crash_step = None
    for t in range(len(lead)):
        a = controller.accel(window)
        if not math.isfinite(a):
            raise SimulationError(f"{controller.name}: non-finite acceleration at step {t}")
        if accel_noise is not None:
            a += float(accel_noise[t])
        accel.append(a)
        if t == len(lead) - 1:
            break
        s_next = s + (lead[t] - v) * dt
        v_next = max(min_speed, v + a * dt)
        if s_next <= crash_spacing:
            crash_step = t + 1
            LOG.debug("%s: crash at step %d (s=%.3f)", controller.name, crash_step, s_next)
            break
        s, v = s_next, v_next
        spacing.append(s)
        speed.append(v)
        window = np.vstack([window[1:], [s, lead[t + 1] - v, v]])
    return SimTrace(np.array(spacing), np.array(speed), np.array(accel),
                    crashed=crash_step is not None, crash_step=crash_step)


def rollout(
    controller: Controller,
    traj: Trajectory,
    warmup: Optional[np.ndarray] = None,
) -> RolloutResult:
    """
    Drive the follower with `controller` behind the trajectory's lead vehicle.
    The window starts from the first seq_len ground-truth states unless a
    warmup window is given; simulation begins at row seq_len - 1.
    """
    L = controller.seq_len
    if len(traj) < L + 1:
        raise ValidationError(f"trajectory of {len(traj)} rows is too short for a window of {L}")
    start = L - 1
    if warmup is None:
        warmup = traj.states()[:L]
    trace = simulate(controller, traj.lead_speed[start:], warmup, traj.dt)
    n = len(trace.spacing)
    crash_time = (start + trace.crash_step) * traj.dt if trace.crashed else None
    result = RolloutResult(
        dt=traj.dt, start=start, lead_speed=traj.lead_speed[start:start + n].copy(),
        spacing=trace.spacing, speed=trace.speed, accel=trace.accel,
        crashed=trace.crashed, crash_time=crash_time, controller=controller.name,
    )
    if trace.crashed:
        LOG.info("%s: rollout crashed at t=%.1f s", controller.name, crash_time)
        return result
    rmse = evaluate_rmse(result, traj)
    LOG.info("%s: rollout RMSE accel=%.4f speed=%.4f spacing=%.4f", controller.name, *rmse)
    return replace(result, rmse=rmse)


def evaluate_rmse(result: RolloutResult, truth: Trajectory) -> Tuple[float, float, float]:
    """(acceleration, speed, spacing) RMSE against the rows of `truth` the rollout covers."""
    if result.crashed:
        raise SimulationError(f"{result.controller or 'rollout'} crashed; no RMSE (N/A)")
    n = len(result)
    if result.start + n != len(truth):
        raise ValidationError(f"rollout covers rows {result.start}..{result.start + n - 1}, truth has {len(truth)}")
    if n < 2:
        raise ValidationError("RMSE needs at least two simulated steps")
    v_true = truth.follow_speed[result.start:]
    s_true = truth.spacing[result.start:]
    a_true = (v_true[1:] - v_true[:-1]) / truth.dt

    def rmse(x, y):
        return float(np.sqrt(np.mean((x - y) ** 2)))

    return rmse(result.accel[:-1], a_true), rmse(result.speed, v_true), rmse(result.spacing, s_true)


def evaluate_prediction(controller: Controller, samples: Sequence[Sample]) -> float:
    """One-step (open-loop) acceleration RMSE on samples."""
    if not samples:
        raise ValidationError("no samples to evaluate")
    batch = SampleBatch.from_samples(samples)
    if batch.seq.shape[1] < controller.seq_len:
        raise ValidationError(f"samples carry {batch.seq.shape[1]} states, {controller.name} needs {controller.seq_len}")
    pred = controller.predict(batch.seq[:, batch.seq.shape[1] - controller.seq_len:, :])
    return float(np.sqrt(np.mean((pred - batch.target) ** 2)))


# ─── Export ───

def rollout_frame(result: RolloutResult, truth: Trajectory) -> pd.DataFrame:
    rows = slice(result.start, result.start + len(result))
    return pd.DataFrame({
        "t": result.times,
        "spacing_sim": result.spacing,
        "speed_sim": result.speed,
        "accel_sim": result.accel,
        "spacing_true": truth.spacing[rows],
        "speed_true": truth.follow_speed[rows],
    }, columns=ROLLOUT_COLUMNS)


def rollout_summary(result: RolloutResult) -> Dict:
    rmse = result.rmse
    return {
        "controller": result.controller,
        "dt": result.dt,
        "start_row": result.start,
        "steps": len(result),
        "crashed": result.crashed,
        "crash_time": result.crash_time,
        "rmse_accel": rmse[0] if rmse else None,
        "rmse_speed": rmse[1] if rmse else None,
        "rmse_spacing": rmse[2] if rmse else None,
    }


def write_rollout(result: RolloutResult, truth: Trajectory, out_dir: Union[str, Path],
                  name: str, extra: Optional[Dict] = None) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"rollout_{name}.csv"
    json_path = out_dir / f"rollout_{name}.json"
    summary = {**rollout_summary(result), **(extra or {})}
    rollout_frame(result, truth).to_csv(csv_path, index=False)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
