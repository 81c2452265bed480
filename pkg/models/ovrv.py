"""
OVRV (optimal velocity relative velocity) car-following model.

    a = k1 * (s - eta - tau * v) + k2 * dv

Calibration fits (k1, k2, tau, eta) to acceleration targets with a bounded
Nelder-Mead simplex from scipy.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from config import CALIBRATION_PARAMS, OVRV_PRESETS, GapSetting, ModelKind
from domain import CfState, DatasetSplit, Sample, SampleBatch
from errors import DegenerateCalibrationError, ValidationError
from models.base import Controller

LOG = logging.getLogger(__name__)

PARAM_NAMES = ("k1", "k2", "tau", "eta")


@dataclass(frozen=True)
class OvrvParams:
    k1: float       # 1/s^2, gain on the spacing error
    k2: float       # 1/s, gain on relative speed
    tau: float      # s, time gap
    eta: float      # m, jam distance

    def __post_init__(self):
        for name, value in zip(PARAM_NAMES, self.as_tuple()):
            if not math.isfinite(value):
                raise ValidationError(f"OVRV parameter {name} must be finite, got {value}")
            if value < 0:
                raise ValidationError(f"OVRV parameter {name} must be >= 0, got {value}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.k1, self.k2, self.tau, self.eta)

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(PARAM_NAMES, self.as_tuple()))

    @classmethod
    def from_dict(cls, d: Dict) -> "OvrvParams":
        missing = [k for k in PARAM_NAMES if k not in d]
        if missing:
            raise ValidationError(f"OVRV parameters missing keys {missing}")
        return cls(*(float(d[k]) for k in PARAM_NAMES))

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "OvrvParams":
        if len(values) != 4:
            raise ValidationError("OVRV needs exactly four parameters (k1, k2, tau, eta)")
        return cls(*(float(v) for v in values))

    @classmethod
    def preset(cls, setting: GapSetting) -> "OvrvParams":
        return cls.from_sequence(OVRV_PRESETS[setting])

    def equilibrium_spacing(self, speed: float) -> float:
        return self.eta + self.tau * speed


def ovrv_accel(state: CfState, params: OvrvParams) -> float:
    return params.k1 * (state.spacing - params.eta - params.tau * state.speed) + params.k2 * state.relative_speed


def ovrv_accel_array(states: np.ndarray, params: OvrvParams) -> np.ndarray:
    """Vectorised ovrv_accel over (N, 3) rows of (s, dv, v)."""
    states = np.asarray(states, dtype=float)
    k1, k2, tau, eta = params.as_tuple()
    return k1 * (states[..., 0] - eta - tau * states[..., 2]) + k2 * states[..., 1]


def ovrv_rdc_derivatives(params: OvrvParams) -> Tuple[float, float, float]:
    """Constant partials (da/dv, da/ds, da/dr)."""
    return (-params.k1 * params.tau - params.k2, params.k1, params.k2)


class OvrvController(Controller):
    """OVRV used as a closed-loop controller; it only looks at the current state."""

    kind = ModelKind.OVRV

    def __init__(self, params: OvrvParams, name: str = "ovrv"):
        self.params = params
        self.name = name

    @property
    def seq_len(self) -> int:
        return 1

    def predict(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[2] != 3:
            raise ValidationError(f"expected (N, T, 3) windows, got {windows.shape}")
        return ovrv_accel_array(windows[:, -1, :], self.params)

    def rdc_gradients(self, batch: SampleBatch) -> np.ndarray:
        return np.tile(np.array(ovrv_rdc_derivatives(self.params)), (len(batch), 1))

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.params.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path], name: str = "ovrv") -> "OvrvController":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"OVRV parameter file not found: {path}")
        return cls(OvrvParams.from_dict(json.loads(path.read_text())), name=name)


# ─── Calibration ───

@dataclass
class CalibrationResult:
    params: OvrvParams
    objective: float                # RMSE of acceleration (m/s^2) on the training split
    iterations: int
    evaluations: int
    converged: bool
    history: List[float] = field(default_factory=list)  # best-so-far objective per iteration

    def summary(self) -> Dict:
        return {
            "params": self.params.to_dict(),
            "objective_rmse": self.objective,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "converged": self.converged,
        }


def _training_arrays(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    batch = SampleBatch.from_samples(samples)
    return batch.phy, batch.target


def _record_best(history: List[float], value: float):
    history.append(min(value, history[-1]) if history else value)


def calibrate_ovrv_detailed(
    split: DatasetSplit,
    init: Optional[OvrvParams] = None,
    budget: int = CALIBRATION_PARAMS["budget"],
) -> CalibrationResult:
    if not split.train:
        raise ValidationError("calibration needs a non-empty training split")
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    init = init or OvrvParams.from_sequence(CALIBRATION_PARAMS["init"])
    states, target = _training_arrays(split.train)

    def objective(x: np.ndarray) -> float:
        k1, k2, tau, eta = x
        pred = k1 * (states[:, 0] - eta - tau * states[:, 2]) + k2 * states[:, 1]
        return float(np.sqrt(np.mean((pred - target) ** 2)))

    x0 = np.array(init.as_tuple())
    if np.ptp(states, axis=0).max() == 0.0 and np.ptp(target) == 0.0:
        raise DegenerateCalibrationError("all training samples are identical", objective(x0))

    history: List[float] = []
    tol = CALIBRATION_PARAMS["tolerance"]
    bounds = [(0.0, None)] * len(PARAM_NAMES)
    iterations = evaluations = 0
    converged = False
    x_best, f_best = x0, objective(x0)
    for attempt in range(1 + CALIBRATION_PARAMS["restarts"]):
        remaining = budget - iterations
        if remaining < 1:
            break
        res = minimize(
            objective, x_best, method="Nelder-Mead", bounds=bounds,
            callback=lambda xk: _record_best(history, objective(xk)),
            options={"xatol": tol, "fatol": tol, "maxiter": remaining},
        )
        iterations += int(res.nit)
        evaluations += int(res.nfev)
        converged = bool(res.success)
        improved = res.fun < f_best
        if res.fun <= f_best:
            x_best, f_best = np.asarray(res.x, dtype=float), float(res.fun)
        # scipy skips the callback on the iteration that exhausts maxiter
        while len(history) < iterations:
            _record_best(history, f_best)
        LOG.debug("simplex pass %d: rmse=%.3e after %d iterations", attempt, res.fun, res.nit)
        if not improved or not converged:
            break

    params = OvrvParams.from_sequence(np.clip(x_best, 0.0, None))
    LOG.info("calibrated OVRV %s, rmse=%.4g (%d iterations)", params.to_dict(), f_best, iterations)
    return CalibrationResult(params, f_best, iterations, evaluations, converged, history)


def calibrate_ovrv(
    split: DatasetSplit,
    init: Optional[OvrvParams] = None,
    budget: int = CALIBRATION_PARAMS["budget"],
) -> OvrvParams:
    """Minimise acceleration RMSE of OVRV over the training samples, params >= 0."""
    return calibrate_ovrv_detailed(split, init, budget).params
