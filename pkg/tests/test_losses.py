"""MSE, PINN blend and RDC penalties, including the penalty's parameter-gradient."""

import numpy as np
import pytest

from domain import SampleBatch
from engine import autodiff as ad
from engine.autodiff import Tape
from engine.losses import RdcWeights, mse_loss, pinn_loss, racer_loss, racer_terms, rdc_penalties
from engine.training import fit_normalizer
from errors import ValidationError
from models.neural import NetworkConfig, RacerNet, linear_phy_network
from models.ovrv import OvrvParams, ovrv_accel_array


@pytest.fixture
def batch(small_split):
    return SampleBatch.from_samples(small_split.train[:16])


def test_mse_loss_value():
    assert float(mse_loss(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 0.0]))) == pytest.approx(13.0 / 3.0)
    assert float(mse_loss(np.array([[1.0], [2.0]]), np.array([1.0, 2.0]))) == 0.0


def test_mse_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        mse_loss(np.ones(3), np.ones(4))
    with pytest.raises(ValidationError):
        mse_loss(np.ones((3, 2)), np.ones(3))


def test_penalties_are_relu_means():
    dv = np.array([[0.5], [-1.0]])
    ds = np.array([[-0.2], [0.3]])
    dr = np.array([[0.1], [0.1]])
    p_speed, p_spacing, p_rel = rdc_penalties(dv, ds, dr)
    assert float(p_speed) == pytest.approx(0.25)
    assert float(p_spacing) == pytest.approx(0.1)
    assert float(p_rel) == 0.0


def test_weights_validation():
    with pytest.raises(ValidationError):
        RdcWeights(-1.0, 0.0, 0.0)
    assert RdcWeights(0.0, 0.0, 0.0).is_zero
    assert not RdcWeights().is_zero


def test_racer_penalties_on_a_linear_network(batch):
    # da/ds = -0.3, da/dr = 0.2, da/dv = 0.1 - 0.2 = -0.1
    net = linear_phy_network((-0.3, 0.2, 0.1), seq_len=batch.seq.shape[1])
    terms = racer_terms(batch, net, RdcWeights(1.0, 2.0, 1.0), Tape())
    assert terms.p_speed.item() == pytest.approx(0.0)
    assert terms.p_spacing.item() == pytest.approx(0.3)
    assert terms.p_rel.item() == pytest.approx(0.0)
    assert terms.total.item() == pytest.approx(terms.mse.item() + 2.0 * 0.3)


def test_zero_weights_reduce_to_mse(batch, small_split):
    net = RacerNet(NetworkConfig(lstm_layers=1, lstm_units=3, seq_head_sizes=(), phy_hidden_sizes=(4,)),
                   seq_len=batch.seq.shape[1], normalizer=fit_normalizer(small_split.train))
    loss = racer_loss(batch, net, RdcWeights(0.0, 0.0, 0.0), Tape())
    pred = net.predict(batch.seq)
    assert loss.item() == pytest.approx(np.mean((batch.target - pred) ** 2), rel=1e-12)


def test_pinn_blend(batch, truth_params):
    net = linear_phy_network((0.05, 0.2, -0.05), bias=-0.5, seq_len=batch.seq.shape[1])
    pred = net.predict(batch.seq)
    data = np.mean((batch.target - pred) ** 2)
    phys = np.mean((pred - ovrv_accel_array(batch.phy, truth_params)) ** 2)
    assert pinn_loss(batch, net, truth_params, 1.0, Tape()).item() == pytest.approx(data)
    assert pinn_loss(batch, net, truth_params, 0.0, Tape()).item() == pytest.approx(phys, abs=1e-15)
    assert pinn_loss(batch, net, truth_params, 0.3, Tape()).item() == pytest.approx(0.3 * data + 0.7 * phys)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_pinn_alpha_range(batch, truth_params, alpha):
    net = linear_phy_network((0.0, 0.0, 0.0), seq_len=batch.seq.shape[1])
    with pytest.raises(ValidationError):
        pinn_loss(batch, net, truth_params, alpha, Tape())


def test_racer_loss_gradient_matches_finite_differences(small_split):
    cfg = NetworkConfig(lstm_layers=1, lstm_units=3, seq_head_sizes=(), phy_hidden_sizes=(6,), init_seed=3)
    net = RacerNet(cfg, seq_len=small_split.seq_len, normalizer=fit_normalizer(small_split.train))
    batch = SampleBatch.from_samples(small_split.train[:8])
    weights = RdcWeights(1.0, 1.0, 1.0)
    names = ["phy.0.W", "phy.1.W", "combiner.W", "lstm0.W_c"]

    tape = Tape()
    loss = racer_loss(batch, net, weights, tape)
    leaves = net.bind(tape)
    analytic = dict(zip(names, ad.grad(tape, loss, [leaves[n] for n in names])))

    base = net.copy_parameters()
    h = 1e-5
    for name in names:
        fd = np.zeros_like(base[name])
        for idx in np.ndindex(fd.shape):
            values = []
            for sign in (1.0, -1.0):
                params = {k: v.copy() for k, v in base.items()}
                params[name][idx] += sign * h
                net.set_parameters(params)
                values.append(racer_loss(batch, net, weights, Tape()).item())
            fd[idx] = (values[0] - values[1]) / (2 * h)
        net.set_parameters(base)
        err = np.linalg.norm(analytic[name] - fd) / max(np.linalg.norm(fd), np.linalg.norm(analytic[name]), 1e-12)
        assert err < 1e-4, name


def test_racer_loss_does_not_depend_on_batch_order(small_split):
    cfg = NetworkConfig(lstm_layers=1, lstm_units=3, seq_head_sizes=(), phy_hidden_sizes=(6,), init_seed=1)
    net = RacerNet(cfg, seq_len=small_split.seq_len, normalizer=fit_normalizer(small_split.train))
    batch = SampleBatch.from_samples(small_split.train[:64])
    order = np.random.default_rng(2).permutation(len(batch))
    weights = RdcWeights(1.0, 1.0, 1.0)
    straight = racer_terms(batch, net, weights, Tape())
    shuffled = racer_terms(batch.take(order), net, weights, Tape())
    for a, b in zip((straight.total, straight.mse, straight.p_speed, straight.p_spacing, straight.p_rel),
                    (shuffled.total, shuffled.mse, shuffled.p_speed, shuffled.p_spacing, shuffled.p_rel)):
        assert b.item() == pytest.approx(a.item(), rel=1e-12, abs=1e-15)
