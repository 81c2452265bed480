"""Adam, early stopping, history and the trained-model acceptance runs."""

import math
from dataclasses import replace

import numpy as np
import pytest

from config import GapSetting, ModelKind
from datagen import ScenarioSpec, generate
from domain import build_samples, held_out_segment, split_dataset
from engine.audit import audit_model, write_report
from engine.losses import RdcWeights
from engine.simulation import rollout, write_rollout
from engine.training import Adam, TrainConfig, fit_normalizer, select_alpha, train_model
from errors import TrainingDivergedError, ValidationError
from models.neural import NetworkConfig

TINY = NetworkConfig(lstm_layers=1, lstm_units=4, seq_head_sizes=(), phy_hidden_sizes=(8,), init_seed=0)


def _cfg(model=ModelKind.RACER, **kw):
    base = dict(model=model, learning_rate=1e-2, batch_size=128, max_epochs=3, patience=5, network=TINY)
    base.update(kw)
    return TrainConfig(**base)


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0])}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"w": np.array([0.5, -3.0])})
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"], [0.9, -1.9], rtol=1e-6)
    assert opt.t == 1


def test_adam_ignores_zero_gradient():
    params = {"w": np.array([1.0])}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"w": np.array([0.0])})
    np.testing.assert_array_equal(params["w"], [1.0])


def test_fit_normalizer_uses_training_statistics(small_split):
    norm = fit_normalizer(small_split.train)
    phy = np.array([s.phy_state.as_tuple() for s in small_split.train])
    np.testing.assert_allclose(norm.mean, phy.mean(axis=0))
    np.testing.assert_allclose(norm.std, phy.std(axis=0))
    assert not norm.constant.any()


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(model=ModelKind.OVRV)
    with pytest.raises(ValidationError):
        _cfg(learning_rate=0.0)
    with pytest.raises(ValidationError):
        _cfg(alpha=1.5)


def test_pinn_needs_ovrv(small_split):
    with pytest.raises(ValidationError):
        train_model(small_split, _cfg(ModelKind.PINN))


def test_training_history_and_best_restore(small_split):
    net, history = train_model(small_split, _cfg(max_epochs=4))
    assert len(history) == 4
    assert list(history.to_frame().columns) == ["epoch", "train_loss", "val_loss", "p_speed", "p_spacing", "p_rel"]
    checkpoints = history.checkpoint_losses()
    assert checkpoints == sorted(checkpoints, reverse=True)
    assert history.best_val_loss == pytest.approx(checkpoints[-1])
    assert all(math.isfinite(r.train_loss) for r in history.records)
    assert net.kind is ModelKind.RACER and net.seq_len == small_split.seq_len


def test_training_is_deterministic(small_split):
    a, _ = train_model(small_split, _cfg(ModelKind.NN, rdc_weights=RdcWeights(0, 0, 0)))
    b, _ = train_model(small_split, _cfg(ModelKind.NN, rdc_weights=RdcWeights(0, 0, 0)))
    np.testing.assert_array_equal(a.flat_parameters(), b.flat_parameters())


def test_early_stopping_respects_patience(small_split):
    # steps this small leave every parameter unchanged, so epoch 2 cannot beat epoch 1
    _, history = train_model(small_split, _cfg(learning_rate=1e-300, max_epochs=10, patience=1))
    assert history.stopped_early
    assert history.best_epoch == 1
    assert len(history) == 2
    assert history.records[-1].epoch == history.best_epoch + 1
    assert history.records[1].val_loss == history.records[0].val_loss


def test_nn_racer_without_penalties_and_pinn_without_physics_coincide(small_split, truth_params):
    nn, _ = train_model(small_split, _cfg(ModelKind.NN))
    racer, _ = train_model(small_split, _cfg(ModelKind.RACER, rdc_weights=RdcWeights(0.0, 0.0, 0.0)))
    pinn, _ = train_model(small_split, _cfg(ModelKind.PINN, alpha=1.0), truth_params)
    np.testing.assert_array_equal(nn.flat_parameters(), racer.flat_parameters())
    np.testing.assert_array_equal(nn.flat_parameters(), pinn.flat_parameters())


def test_test_split_never_reaches_training(small_split):
    shuffled = replace(small_split, test=tuple(reversed(small_split.test)))
    a, history_a = train_model(small_split, _cfg())
    b, history_b = train_model(shuffled, _cfg())
    np.testing.assert_array_equal(a.flat_parameters(), b.flat_parameters())
    assert history_a.to_frame().equals(history_b.to_frame())


def test_overflowing_updates_raise_training_diverged(small_split):
    with pytest.raises(TrainingDivergedError) as info:
        train_model(small_split, _cfg(ModelKind.NN, learning_rate=1e300))
    assert info.value.epoch == 1


def test_rerun_writes_identical_rollout_and_audit_files(small_split, oscillatory, tmp_path):
    segment = held_out_segment(oscillatory, seq_len=small_split.seq_len)
    written = []
    for run in ("first", "second"):
        net, _ = train_model(small_split, _cfg())
        out = tmp_path / run
        written.append(write_rollout(rollout(net, segment), segment, out, "racer")
                       + write_report(audit_model(net, small_split.test, tolerance=0.0), out, "racer"))
    for a, b in zip(*written):
        assert a.name == b.name
        assert a.read_bytes() == b.read_bytes()


def test_pinn_trains_with_calibrated_physics(small_split, truth_params):
    net, history = train_model(small_split, _cfg(ModelKind.PINN, alpha=0.5), truth_params)
    assert net.kind is ModelKind.PINN and len(history) == 3


def test_select_alpha_picks_lowest_validation_mse(small_split, truth_params):
    selection = select_alpha(small_split, _cfg(ModelKind.PINN, max_epochs=1), truth_params, grid=(0.2, 0.8))
    assert set(selection.scores) == {0.2, 0.8}
    assert selection.scores[selection.alpha] == min(selection.scores.values())


# ── Acceptance runs ──
# Two minutes of noisy data and no validation block, so the best-epoch restore
# follows the training loss.

ACCEPT_NET = NetworkConfig(lstm_layers=1, lstm_units=16, seq_head_sizes=(16,), phy_hidden_sizes=(32, 32), init_seed=0)
ACCEPT_RATIOS = (0.9, 0.0, 0.1)
ACCEPT_NOISE = 0.3


def _accept_spec(setting, noise_std=ACCEPT_NOISE):
    return ScenarioSpec("oscillatory", duration=120.0, noise_std=noise_std, setting=setting, seed=0)


def _accept_split(setting):
    traj, _ = generate(_accept_spec(setting))
    return split_dataset(build_samples(traj, seq_len=10), ACCEPT_RATIOS, seed=0)


def _accept_cfg(model, weights):
    return TrainConfig(model=model, learning_rate=5e-3, batch_size=32, max_epochs=120, patience=120,
                       rdc_weights=weights, network=ACCEPT_NET)


def _train_pair(split):
    racer, history = train_model(split, _accept_cfg(ModelKind.RACER, RdcWeights(1.0, 1.0, 1.0)))
    nn, _ = train_model(split, _accept_cfg(ModelKind.NN, RdcWeights(0.0, 0.0, 0.0)))
    return racer, history, nn


@pytest.fixture(scope="module")
def max_gap_run():
    split = _accept_split(GapSetting.MAX_GAP)
    return (split,) + _train_pair(split)


@pytest.fixture(scope="module")
def min_gap_run():
    split = _accept_split(GapSetting.MIN_GAP)
    return (split,) + _train_pair(split)


@pytest.mark.slow
def test_racer_has_no_violations_and_baseline_does(max_gap_run):
    split, racer, history, nn = max_gap_run
    assert split.validation == ()

    assert audit_model(racer, split.test, tolerance=0.0).total_violations == 0
    assert audit_model(nn, split.test, tolerance=0.0).total_violations > 0

    last = history.records[-1]
    assert max(last.p_speed, last.p_spacing, last.p_rel) < 1e-6
    checkpoints = history.checkpoint_losses()
    assert checkpoints == sorted(checkpoints, reverse=True)


@pytest.mark.slow
def test_racer_rollout_is_no_worse_than_nn(min_gap_run):
    _, racer, _, nn = min_gap_run
    # replay against the noise-free follower behind the same lead
    clean, _ = generate(_accept_spec(GapSetting.MIN_GAP, noise_std=0.0))
    r_racer, r_nn = rollout(racer, clean), rollout(nn, clean)
    assert not r_racer.crashed and not r_nn.crashed
    assert r_racer.rmse[2] <= r_nn.rmse[2]


@pytest.mark.slow
def test_same_seed_same_checkpoint(tmp_path):
    split = _accept_split(GapSetting.MAX_GAP)
    cfg = replace(_accept_cfg(ModelKind.RACER, RdcWeights(1.0, 1.0, 1.0)), max_epochs=5)
    a, _ = train_model(split, cfg)
    b, _ = train_model(split, cfg)
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
