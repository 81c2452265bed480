"""Core car-following data types, acceleration estimation and dataset splitting."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import DATA_DEFAULTS, TRAJECTORY_COLUMNS
from errors import ValidationError

LOG = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CfState:
    """One observation o = (s, dv, v); dv = v_lead - v_follow, so dv = ds/dt."""
    spacing: float
    relative_speed: float
    speed: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in self.as_tuple()):
            raise ValidationError(f"non-finite state {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.spacing, self.relative_speed, self.speed)

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "CfState":
        return cls(float(row[0]), float(row[1]), float(row[2]))


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Leader/follower series sampled every dt seconds.

    `generated` marks simulated data, which must satisfy
    s(t+dt) - s(t) = (v_lead(t) - v_follow(t)) * dt; measured data may not.
    """
    dt: float
    lead_speed: np.ndarray
    follow_speed: np.ndarray
    spacing: np.ndarray
    generated: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "lead_speed", _frozen(self.lead_speed, "lead_speed"))
        object.__setattr__(self, "follow_speed", _frozen(self.follow_speed, "follow_speed"))
        object.__setattr__(self, "spacing", _frozen(self.spacing, "spacing"))
        n = len(self.lead_speed)
        if len(self.follow_speed) != n or len(self.spacing) != n:
            raise ValidationError("lead_speed, follow_speed and spacing must have equal length")
        if n < 2:
            raise ValidationError(f"trajectory needs at least 2 samples, got {n}")
        if self.generated:
            err = self.kinematic_error()
            if err > DATA_DEFAULTS["kinematic_tolerance"]:
                raise ValidationError(f"generated trajectory is kinematically inconsistent (max error {err:.3g} m)")

    def __len__(self) -> int:
        return len(self.lead_speed)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.dt == other.dt and self.generated == other.generated
                and np.array_equal(self.lead_speed, other.lead_speed)
                and np.array_equal(self.follow_speed, other.follow_speed)
                and np.array_equal(self.spacing, other.spacing))

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def relative_speed(self) -> np.ndarray:
        return self.lead_speed - self.follow_speed

    def states(self) -> np.ndarray:
        """(n, 3) array of (s, dv, v) rows."""
        return np.column_stack([self.spacing, self.relative_speed, self.follow_speed])

    def state(self, i: int) -> CfState:
        return CfState(float(self.spacing[i]), float(self.lead_speed[i] - self.follow_speed[i]),
                       float(self.follow_speed[i]))

    def kinematic_error(self) -> float:
        ds = np.diff(self.spacing)
        expected = (self.lead_speed[:-1] - self.follow_speed[:-1]) * self.dt
        return float(np.max(np.abs(ds - expected))) if len(ds) else 0.0

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.dt, self.lead_speed[start:stop], self.follow_speed[start:stop],
                          self.spacing[start:stop], generated=self.generated)


@dataclass(frozen=True)
class Sample:
    seq_window: Tuple[CfState, ...]     # X_seq
    phy_state: CfState                  # X_phy, the window's last step
    target_accel: float                 # a_true (m/s^2)
    step: int = 0                       # trajectory index of phy_state

    def __post_init__(self):
        if not self.seq_window:
            raise ValidationError("empty sequence window")
        if self.seq_window[-1] != self.phy_state:
            raise ValidationError("phy_state must equal the final element of seq_window")
        if not math.isfinite(self.target_accel):
            raise ValidationError("target_accel must be finite")


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[Sample, ...]
    validation: Tuple[Sample, ...]
    test: Tuple[Sample, ...]
    ratios: Tuple[float, float, float] = DATA_DEFAULTS["split_ratios"]
    seed: int = 0

    @property
    def seq_len(self) -> int:
        for part in (self.train, self.validation, self.test):
            if part:
                return len(part[0].seq_window)
        return 0


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Stacked arrays for a list of samples: seq (N, T, 3), phy (N, 3), target (N,)."""
    seq: np.ndarray
    phy: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleBatch":
        if not samples:
            raise ValidationError("cannot stack an empty sample list")
        seq_len = len(samples[0].seq_window)
        if any(len(s.seq_window) != seq_len for s in samples):
            raise ValidationError("all samples must share one window length")
        seq = np.array([[st.as_tuple() for st in s.seq_window] for s in samples], dtype=float)
        return cls(seq=seq, phy=seq[:, -1, :].copy(),
                   target=np.array([s.target_accel for s in samples], dtype=float))

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(self.seq[idx], self.phy[idx], self.target[idx])


def _window_steps(window: float, dt: float) -> int:
    if not window > 0:
        raise ValidationError(f"acceleration window must be positive, got {window}")
    k = int(round(window / dt))
    if k < 1 or abs(k * dt - window) > 1e-9 * max(1.0, window):
        raise ValidationError(f"window {window} s is not a multiple of dt = {dt} s")
    return k


def estimate_accel(traj: Trajectory, window: float = DATA_DEFAULTS["accel_window"]) -> np.ndarray:
    """Forward difference a(t) = (V_f(t + window) - V_f(t)) / window."""
    k = _window_steps(window, traj.dt)
    if k >= len(traj):
        raise ValidationError(f"window {window} s spans the whole trajectory ({traj.duration:.3g} s)")
    v = traj.follow_speed
    return (v[k:] - v[:-k]) / window


def build_samples(
    traj: Trajectory,
    seq_len: int = DATA_DEFAULTS["seq_len"],
    accel_window: float = DATA_DEFAULTS["accel_window"],
) -> List[Sample]:
    """Sliding windows of seq_len states with the acceleration target at the window's last step."""
    if seq_len < 1:
        raise ValidationError(f"seq_len must be >= 1, got {seq_len}")
    k = _window_steps(accel_window, traj.dt)
    n = len(traj)
    count = n - seq_len - k + 1
    if count < 1:
        raise ValidationError(f"trajectory of {n} rows too short for seq_len={seq_len} and window={accel_window}")
    accel = estimate_accel(traj, accel_window)
    states = [traj.state(i) for i in range(n - k)]
    samples = []
    for t in range(seq_len - 1, n - k):
        window = tuple(states[t - seq_len + 1:t + 1])
        samples.append(Sample(window, window[-1], float(accel[t]), step=t))
    LOG.debug("built %d samples (seq_len=%d, window=%.2fs)", len(samples), seq_len, accel_window)
    return samples


def _split_counts(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    counts = [int(math.floor(r * n + 1e-9)) for r in ratios]
    # remainder goes to the first split with a nonzero ratio
    first = next(i for i, r in enumerate(ratios) if r > 0)
    counts[first] += n - sum(counts)
    return counts[0], counts[1], counts[2]


def _check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3:
        raise ValidationError("ratios must have three entries (train, validation, test)")
    if any(r < 0 for r in ratios):
        raise ValidationError(f"ratios must be nonnegative, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > DATA_DEFAULTS["ratio_tolerance"]:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    return (float(ratios[0]), float(ratios[1]), float(ratios[2]))


def split_dataset(
    samples: Sequence[Sample],
    ratios: Sequence[float] = DATA_DEFAULTS["split_ratios"],
    seed: int = 0,
) -> DatasetSplit:
    """
    Temporal split (train = earliest block, then validation, then test);
    only the training block is shuffled, with a seeded generator.
    """
    ratios = _check_ratios(ratios)
    if not samples:
        raise ValidationError("cannot split an empty sample list")
    n_train, n_val, n_test = _split_counts(len(samples), ratios)
    for name, count, r in zip(("train", "validation", "test"), (n_train, n_val, n_test), ratios):
        if r > 0 and count == 0:
            raise ValidationError(f"{name} split is empty with ratio {r} over {len(samples)} samples")
    train = list(samples[:n_train])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train))
    return DatasetSplit(
        train=tuple(train[i] for i in order),
        validation=tuple(samples[n_train:n_train + n_val]),
        test=tuple(samples[n_train + n_val:]),
        ratios=ratios,
        seed=seed,
    )


def segment_rows(
    n_rows: int,
    seq_len: int,
    accel_window_steps: int,
    ratios: Sequence[float] = DATA_DEFAULTS["split_ratios"],
) -> Dict[str, Tuple[int, int]]:
    """Trajectory row range [start, stop) touched by each temporal split block."""
    ratios = _check_ratios(ratios)
    n_samples = n_rows - seq_len - accel_window_steps + 1
    if n_samples < 1:
        raise ValidationError("trajectory too short to build any sample")
    n_train, n_val, _ = _split_counts(n_samples, ratios)
    blocks = {"train": (0, n_train), "validation": (n_train, n_train + n_val),
              "test": (n_train + n_val, n_samples)}
    rows = {}
    for name, (a, b) in blocks.items():
        if b <= a:
            rows[name] = (0, 0)
        else:
            # sample i covers rows i .. i + seq_len - 1 + k
            rows[name] = (a, b - 1 + seq_len + accel_window_steps)
    return rows


def held_out_segment(
    traj: Trajectory,
    seq_len: int = DATA_DEFAULTS["seq_len"],
    accel_window: float = DATA_DEFAULTS["accel_window"],
    ratios: Sequence[float] = DATA_DEFAULTS["split_ratios"],
) -> Trajectory:
    """The part of a trajectory covering the held-out test block."""
    k = _window_steps(accel_window, traj.dt)
    start, stop = segment_rows(len(traj), seq_len, k, ratios)["test"]
    if stop - start < 2:
        raise ValidationError("test block is empty")
    return traj.slice(start, stop)


# ── CSV / manifest I/O ──

def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    return pd.DataFrame({
        "t": traj.times,
        "lead_speed": traj.lead_speed,
        "follow_speed": traj.follow_speed,
        "spacing": traj.spacing,
    }, columns=TRAJECTORY_COLUMNS)


def write_trajectory(traj: Trajectory, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj).to_csv(path, index=False)
    return path


def read_trajectory(path: PathLike, generated: bool = False, dt: Optional[float] = None) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"trajectory file not found: {path}")
    df = pd.read_csv(path)
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    if dt is None:
        steps = np.diff(df["t"].to_numpy(dtype=float))
        if len(steps) == 0:
            raise ValidationError(f"{path}: need at least two rows")
        dt = float(np.round(np.median(steps), 9))
    return Trajectory(
        dt=dt,
        lead_speed=df["lead_speed"].to_numpy(dtype=float),
        follow_speed=df["follow_speed"].to_numpy(dtype=float),
        spacing=df["spacing"].to_numpy(dtype=float),
        generated=generated,
    )


def write_split_segments(
    traj: Trajectory,
    out_dir: PathLike,
    seq_len: int = DATA_DEFAULTS["seq_len"],
    accel_window: float = DATA_DEFAULTS["accel_window"],
    ratios: Sequence[float] = DATA_DEFAULTS["split_ratios"],
    seed: int = 0,
) -> Dict[str, object]:
    """Write train/validation/test trajectory CSVs and return the split manifest."""
    out_dir = Path(out_dir)
    k = _window_steps(accel_window, traj.dt)
    rows = segment_rows(len(traj), seq_len, k, ratios)
    for name, (a, b) in rows.items():
        if b - a >= 2:
            write_trajectory(traj.slice(a, b), out_dir / f"{name}.csv")
    return {
        "dt": traj.dt,
        "seq_len": seq_len,
        "accel_window": accel_window,
        "seed": seed,
        "ratios": list(ratios),
        "rows": {name: list(r) for name, r in rows.items()},
    }
