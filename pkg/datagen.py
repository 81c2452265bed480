"""
Synthetic ACC data: lead-speed profiles for four regimes, and a follower
simulated with ground-truth OVRV plus optional acceleration noise.
Regime shapes come from data/scenarios.json.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from config import DATA_DEFAULTS, SCENARIO_DEFAULTS, GapSetting, ScenarioKind
from domain import Trajectory
from engine.simulation import simulate
from errors import SimulationError, ValidationError
from models.ovrv import OvrvController, OvrvParams

LOG = logging.getLogger(__name__)

REGIMES_PATH = Path(__file__).resolve().parent / "data" / "scenarios.json"


def load_regimes(path: Union[str, Path] = REGIMES_PATH) -> Dict[str, Dict]:
    with open(path) as f:
        return json.load(f)["regimes"]


def _enum(enum_cls, value, field_name: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ValidationError(f"{field_name}: unknown value {value!r} (expected one of {allowed})") from None


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    duration: float = SCENARIO_DEFAULTS["duration"]
    dt: float = DATA_DEFAULTS["dt"]
    speed_range: Optional[Tuple[float, float]] = None   # regime default when None
    noise_std: float = SCENARIO_DEFAULTS["noise_std"]   # m/s^2 on follower acceleration
    seed: int = SCENARIO_DEFAULTS["seed"]
    setting: GapSetting = SCENARIO_DEFAULTS["setting"]
    params: Optional[OvrvParams] = None                 # ground truth; setting preset when None
    initial_spacing: Optional[float] = None             # OVRV equilibrium when None
    shape: Dict[str, float] = field(default_factory=dict)  # overrides of regime shape parameters

    def __post_init__(self):
        object.__setattr__(self, "kind", _enum(ScenarioKind, self.kind, "kind"))
        object.__setattr__(self, "setting", _enum(GapSetting, self.setting, "setting"))
        if not (self.dt > 0 and self.duration > 0):
            raise ValidationError(f"duration and dt must be positive, got {self.duration}, {self.dt}")
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 2:
            raise ValidationError(f"duration {self.duration} s is not an integral number (>= 2) of dt={self.dt} s steps")
        if not self.noise_std >= 0:
            raise ValidationError(f"noise_std must be >= 0, got {self.noise_std}")
        regime = {**load_regimes()[self.kind.value], **self.shape}
        object.__setattr__(self, "shape", {k: v for k, v in regime.items() if k not in ("description", "speed_range")})
        lo, hi = self.speed_range if self.speed_range is not None else regime["speed_range"]
        if not 0 <= lo <= hi:
            raise ValidationError(f"speed_range must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        object.__setattr__(self, "speed_range", (float(lo), float(hi)))
        if self.params is None:
            object.__setattr__(self, "params", OvrvParams.preset(self.setting))
        if self.initial_spacing is not None and not self.initial_spacing > 0:
            raise ValidationError(f"initial_spacing must be > 0, got {self.initial_spacing}")
        if "hold" in self.shape and self.shape["hold"] < SCENARIO_DEFAULTS["min_step_hold"]:
            raise ValidationError(f"step hold must be >= {SCENARIO_DEFAULTS['min_step_hold']} s")
        if "levels" in self.shape and int(self.shape["levels"]) < 1:
            raise ValidationError("a staircase needs at least one speed level")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "duration": self.duration,
            "dt": self.dt,
            "speed_range": list(self.speed_range),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "setting": self.setting.value,
            "params": self.params.to_dict(),
            "initial_spacing": self.initial_spacing,
            "shape": dict(sorted(self.shape.items())),
        }


def _cosine_ramp(frac: np.ndarray) -> np.ndarray:
    """Smooth 0 -> 1 transition for frac in [0, 1]."""
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(frac, 0.0, 1.0)))


def _oscillatory(spec: ScenarioSpec, t: np.ndarray, rng) -> np.ndarray:
    lo, hi = spec.speed_range
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.sin(2.0 * np.pi * t / spec.shape["period"])


def _steps(spec: ScenarioSpec, t: np.ndarray, rng) -> np.ndarray:
    lo, hi = spec.speed_range
    ramp = SCENARIO_DEFAULTS["step_ramp"]
    hold = spec.shape["hold"]
    n_seg = max(1, int(math.floor((spec.duration + ramp) / (hold + ramp))))
    hold = (spec.duration - (n_seg - 1) * ramp) / n_seg     # stretch holds to fill the duration
    pool = np.linspace(lo, hi, int(spec.shape["levels"]))
    # one level up or down per transition, reflecting at the ends of the pool
    idx = [int(rng.integers(len(pool)))]
    for _ in range(n_seg - 1):
        step = 1 if rng.random() < 0.5 else -1
        nxt = idx[-1] + step
        if not 0 <= nxt < len(pool):
            nxt = idx[-1] - step
        idx.append(min(max(nxt, 0), len(pool) - 1))
    levels = pool[idx]

    cycle = hold + ramp
    k = np.minimum((t // cycle).astype(int), n_seg - 1)
    phase = t - k * cycle
    nxt = levels[np.minimum(k + 1, n_seg - 1)]
    ramping = phase >= hold
    v = levels[k].copy()
    v[ramping] += (nxt[ramping] - levels[k][ramping]) * _cosine_ramp((phase[ramping] - hold) / ramp)
    return v


def _dips(spec: ScenarioSpec, t: np.ndarray, rng) -> np.ndarray:
    lo, hi = spec.speed_range
    s = spec.shape
    width = 2.0 * s["dip_ramp"] + s["dip_hold"]
    starts = []
    start = s["settle"]
    while start + width + s["settle"] <= spec.duration:
        starts.append(start)
        start += width + s["dip_interval"] * (1.0 + s["interval_jitter"] * rng.uniform(-1.0, 1.0))
    depth = np.zeros_like(t)
    for t0 in starts:
        down = _cosine_ramp((t - t0) / s["dip_ramp"])
        up = _cosine_ramp((t - t0 - s["dip_ramp"] - s["dip_hold"]) / s["dip_ramp"])
        depth = np.maximum(depth, down - up)
    return hi - (hi - lo) * depth


_PROFILES = {
    ScenarioKind.OSCILLATORY: _oscillatory,
    ScenarioKind.LOW_SPEED_STEPS: _steps,
    ScenarioKind.HIGH_SPEED_STEPS: _steps,
    ScenarioKind.DIPS: _dips,
}


def _streams(seed: int):
    profile_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(profile_seq), np.random.default_rng(noise_seq)


def gen_lead_profile(spec: ScenarioSpec) -> np.ndarray:
    """Lead speed (m/s) at every step of the scenario; deterministic given the seed."""
    builder = _PROFILES.get(spec.kind)
    if builder is None:
        raise ValidationError(f"kind: no profile for {spec.kind!r}")
    rng, _ = _streams(spec.seed)
    t = np.arange(spec.n_steps) * spec.dt
    return np.maximum(builder(spec, t, rng), 0.0)


def gen_follower(spec: ScenarioSpec, lead_profile: np.ndarray) -> Trajectory:
    """Follower driven by ground-truth OVRV from equilibrium, plus seeded Gaussian acceleration noise."""
    lead = np.asarray(lead_profile, dtype=float)
    if lead.ndim != 1 or len(lead) < 2 or np.any(lead < 0) or not np.all(np.isfinite(lead)):
        raise ValidationError("lead profile must be a finite, non-negative series of at least 2 speeds")
    params = spec.params
    v0 = float(lead[0])
    s0 = spec.initial_spacing if spec.initial_spacing is not None else params.equilibrium_spacing(v0)
    if not s0 > 0:
        raise ValidationError(f"initial spacing {s0} m is not positive; set initial_spacing")
    _, noise_rng = _streams(spec.seed)
    noise = noise_rng.normal(0.0, spec.noise_std, len(lead)) if spec.noise_std > 0 else None

    trace = simulate(OvrvController(params), lead, [[s0, lead[0] - v0, v0]], spec.dt, accel_noise=noise)
    if trace.crashed:
        raise SimulationError(
            f"ground-truth OVRV {params.to_dict()} crashes in the {spec.kind.value} scenario "
            f"at t={trace.crash_step * spec.dt:.1f} s")
    bound = DATA_DEFAULTS["max_generated_accel"]
    peak = float(np.max(np.abs(np.diff(trace.speed)) / spec.dt))
    if peak > bound:
        raise SimulationError(f"generated acceleration {peak:.2f} m/s^2 exceeds {bound} m/s^2")
    return Trajectory(spec.dt, lead, trace.speed, trace.spacing, generated=True)


def generate(spec: ScenarioSpec) -> Tuple[Trajectory, Dict]:
    """Trajectory plus a manifest describing the scenario that produced it."""
    lead = gen_lead_profile(spec)
    traj = gen_follower(spec, lead)
    LOG.info("generated %s scenario: %d rows, spacing %.1f-%.1f m",
             spec.kind.value, len(traj), traj.spacing.min(), traj.spacing.max())
    manifest = {
        "scenario": spec.to_dict(),
        "rows": len(traj),
        "spacing_min": float(traj.spacing.min()),
        "kinematic_error": traj.kinematic_error(),
    }
    return traj, manifest
