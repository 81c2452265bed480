"""OVRV physics, controller I/O and Nelder-Mead calibration."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from config import GapSetting
from datagen import ScenarioSpec, generate
from domain import CfState, Trajectory, build_samples, split_dataset
from errors import DegenerateCalibrationError, ValidationError
from models.ovrv import (
    OvrvController, OvrvParams, calibrate_ovrv, calibrate_ovrv_detailed, ovrv_accel, ovrv_accel_array,
    ovrv_rdc_derivatives,
)

positive = st.floats(min_value=0.0, max_value=50.0, allow_nan=False)


def test_accel_formula():
    p = OvrvParams(0.05, 0.2, 1.0, 10.0)
    # 0.05 * (30 - 10 - 15) + 0.2 * 1
    assert ovrv_accel(CfState(30.0, 1.0, 15.0), p) == pytest.approx(0.45)


@given(st.tuples(positive, positive, positive, positive),
       st.tuples(st.floats(0.1, 100), st.floats(-10, 10), st.floats(0, 40)))
def test_vectorised_accel_matches_scalar(params, state):
    p = OvrvParams.from_sequence(params)
    a = ovrv_accel_array(np.array([state]), p)[0]
    assert a == pytest.approx(ovrv_accel(CfState(*state), p), rel=1e-12, abs=1e-9)


def test_rdc_derivatives():
    p = OvrvParams(0.05, 0.2, 1.0, 10.0)
    assert ovrv_rdc_derivatives(p) == pytest.approx((-0.25, 0.05, 0.2))


@pytest.mark.parametrize("values", [(-0.1, 0.2, 1.0, 1.0), (0.1, float("nan"), 1.0, 1.0), (1.0, 2.0, 3.0)])
def test_invalid_params_rejected(values):
    with pytest.raises(ValidationError):
        OvrvParams.from_sequence(values)


def test_presets():
    assert OvrvParams.preset(GapSetting.MIN_GAP).as_tuple() == (0.052, 0.236, 0.796, 13.836)
    assert OvrvParams.preset(GapSetting.MAX_GAP).tau == 2.489


def test_controller_uses_the_last_state_only():
    ctrl = OvrvController(OvrvParams(0.05, 0.2, 1.0, 10.0))
    assert ctrl.seq_len == 1
    windows = np.array([[[30.0, 1.0, 15.0]], [[25.0, 0.0, 15.0]]])
    np.testing.assert_allclose(ctrl.predict(windows), [0.45, 0.0])
    with pytest.raises(ValidationError):
        ctrl.accel(np.zeros((2, 3)))


def test_controller_save_load(tmp_path):
    ctrl = OvrvController(OvrvParams(0.05, 0.2, 1.0, 10.0))
    path = ctrl.save(tmp_path / "ovrv.json")
    assert OvrvController.load(path).params == ctrl.params
    with pytest.raises(ValidationError):
        OvrvController.load(tmp_path / "missing.json")


# ── Calibration ──

def test_calibration_recovers_noiseless_parameters(truth_params):
    traj, _ = generate(ScenarioSpec("oscillatory", duration=300.0, params=truth_params))
    split = split_dataset(build_samples(traj, seq_len=1), seed=0)
    result = calibrate_ovrv_detailed(split)
    np.testing.assert_allclose(result.params.as_tuple(), truth_params.as_tuple(), rtol=1e-3)
    assert result.objective < 1e-3
    assert result.evaluations >= result.iterations


def test_calibration_history_is_recorded(small_split):
    result = calibrate_ovrv_detailed(small_split, budget=50)
    assert 0 < result.iterations <= 50
    assert len(result.history) == result.iterations
    assert np.all(np.diff(result.history) <= 0.0)
    assert result.history[-1] == pytest.approx(result.objective, rel=1e-9)


def test_calibration_history_covers_every_iteration_when_budget_runs_out(small_split):
    # a budget this small stops Nelder-Mead on maxiter, not on tolerance
    result = calibrate_ovrv_detailed(small_split, budget=5)
    assert result.iterations == 5
    assert not result.converged
    assert len(result.history) == 5
    assert np.all(np.diff(result.history) <= 0.0)


def test_calibrated_params_are_non_negative(small_split):
    assert all(v >= 0 for v in calibrate_ovrv(small_split, budget=200).as_tuple())


def test_degenerate_data_raises():
    const = CfState(20.0, 0.0, 10.0)
    samples = build_samples(
        Trajectory(0.1, [10.0] * 20, [10.0] * 20, [20.0] * 20), seq_len=1)
    assert all(s.phy_state == const for s in samples)
    split = split_dataset(samples, (1.0, 0.0, 0.0))
    with pytest.raises(DegenerateCalibrationError) as info:
        calibrate_ovrv(split)
    assert info.value.objective >= 0


def test_budget_must_be_positive(small_split):
    with pytest.raises(ValidationError):
        calibrate_ovrv(small_split, budget=0)


@pytest.mark.slow
def test_calibration_with_accel_noise_within_ten_percent(truth_params):
    traj, _ = generate(ScenarioSpec("oscillatory", duration=600.0, params=truth_params, noise_std=0.05, seed=1))
    split = split_dataset(build_samples(traj, seq_len=1), seed=0)
    params = calibrate_ovrv(split)
    np.testing.assert_allclose(params.as_tuple(), truth_params.as_tuple(), rtol=0.1)
