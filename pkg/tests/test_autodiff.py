"""Reverse-mode tape: first and second order gradients against finite differences."""

import numpy as np
import pytest

from engine import autodiff as ad
from engine.autodiff import Tape
from errors import AutodiffError

H = 1e-5


def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def _central_diff(f, x):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += H
        down[i] -= H
        g[i] = (f(up) - f(down)) / (2 * H)
    return g


def _random_mlp(rng):
    n_layers = int(rng.integers(1, 4))
    sizes = [3] + [int(rng.integers(1, 17)) for _ in range(n_layers - 1)] + [1]
    weights = [rng.normal(0, 0.7, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0, 0.3, b) for b in sizes[1:]]
    acts = [str(rng.choice(["tanh", "sigmoid"])) for _ in range(n_layers - 1)] + ["linear"]
    return weights, biases, acts


def _mlp_loss(x, weights, biases, acts, target):
    h = x
    for w, b, act in zip(weights, biases, acts):
        h = ad.ACTIVATIONS[act](ad.linear(h, w, b))
    diff = ad.add(h, -target)
    return ad.mean(ad.mul(diff, diff))


# ── First order ──

def test_gradients_match_finite_differences_on_random_networks():
    rng = np.random.default_rng(0)
    for _ in range(100):
        weights, biases, acts = _random_mlp(rng)
        x = rng.normal(size=(5, 3))
        target = rng.normal(size=(5, 1))

        tape = Tape()
        w_vars = [tape.leaf(w) for w in weights]
        b_vars = [tape.leaf(b) for b in biases]
        loss = _mlp_loss(x, w_vars, b_vars, acts, target)
        grads = ad.grad(tape, loss, w_vars + b_vars)

        for k, w in enumerate(weights):
            def f(wk, k=k):
                ws = weights[:k] + [wk] + weights[k + 1:]
                return float(_mlp_loss(x, ws, biases, acts, target))
            assert _rel_err(grads[k], _central_diff(f, w)) < 1e-6


def test_tapeless_path_matches_recorded_values():
    rng = np.random.default_rng(1)
    weights, biases, acts = _random_mlp(rng)
    x = rng.normal(size=(4, 3))
    target = rng.normal(size=(4, 1))
    tape = Tape()
    recorded = _mlp_loss(x, [tape.leaf(w) for w in weights], biases, acts, target)
    assert recorded.item() == pytest.approx(float(_mlp_loss(x, weights, biases, acts, target)), rel=1e-14)


def test_gradient_of_unused_input_is_zero():
    tape = Tape()
    x, y = tape.leaf(np.ones(3)), tape.leaf(np.ones(3))
    out = ad.total(ad.tanh(x))
    gx, gy = ad.grad(tape, out, [x, y])
    np.testing.assert_allclose(gx, 1.0 - np.tanh(1.0) ** 2)
    np.testing.assert_array_equal(gy, np.zeros(3))


def test_gradient_is_linear_in_the_output():
    rng = np.random.default_rng(4)
    for _ in range(20):
        weights, biases, acts = _random_mlp(rng)
        x = rng.normal(size=(5, 3))
        a, b = rng.normal(size=2)
        tape = Tape()
        params = [tape.leaf(w) for w in weights] + [tape.leaf(bias) for bias in biases]
        ws, bs = params[:len(weights)], params[len(weights):]
        f = _mlp_loss(x, ws, bs, acts, rng.normal(size=(5, 1)))
        g = _mlp_loss(x, ws, bs, acts, rng.normal(size=(5, 1)))
        combined = ad.add(ad.affine(f, a, 0.0), ad.affine(g, b, 0.0))

        lhs = ad.grad(tape, combined, params)
        rhs = [a * gf + b * gg for gf, gg in zip(ad.grad(tape, f, params), ad.grad(tape, g, params))]
        for left, right in zip(lhs, rhs):
            np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-12)


def _squared_maximum(x, y):
    m = ad.maximum(ad.tanh(x), y)
    return ad.total(ad.mul(m, m))


def _scaled_reciprocal(x, y):
    return ad.total(ad.mul(ad.reciprocal(ad.affine(ad.mul(x, x), 1.0, 1.0)), y))


PIECEWISE_AND_RATIONAL = {"maximum": _squared_maximum, "reciprocal": _scaled_reciprocal}


def _operands(rng):
    x = rng.normal(size=(4, 2))
    # keep y clear of tanh(x) so no finite-difference step crosses a tie
    side = np.where(rng.random(size=x.shape) < 0.5, -1.0, 1.0)
    y = np.tanh(x) + side * rng.uniform(0.1, 0.5, size=x.shape)
    return x, y


@pytest.mark.parametrize("name", sorted(PIECEWISE_AND_RATIONAL))
def test_primitive_first_order_matches_finite_differences(name):
    f = PIECEWISE_AND_RATIONAL[name]
    x0, y0 = _operands(np.random.default_rng(5))
    tape = Tape()
    xv, yv = tape.leaf(x0), tape.leaf(y0)
    gx, gy = ad.grad(tape, f(xv, yv), [xv, yv])
    assert _rel_err(gx, _central_diff(lambda x: float(f(x, y0)), x0)) < 1e-6
    assert _rel_err(gy, _central_diff(lambda y: float(f(x0, y)), y0)) < 1e-6


@pytest.mark.parametrize("name", sorted(PIECEWISE_AND_RATIONAL))
def test_primitive_second_order_matches_finite_differences(name):
    f = PIECEWISE_AND_RATIONAL[name]
    x0, y0 = _operands(np.random.default_rng(6))

    def squared_gradient_norm(x, y):
        tape = Tape()
        xv, yv = tape.leaf(x), tape.leaf(y)
        gx, gy = ad.grad(tape, f(xv, yv), [xv, yv])
        return float(np.sum(gx * gx) + np.sum(gy * gy))

    tape = Tape()
    xv, yv = tape.leaf(x0), tape.leaf(y0)
    gx, gy = ad.grad_as_expressions(tape, f(xv, yv), [xv, yv])
    loss = ad.add(ad.total(ad.mul(gx, gx)), ad.total(ad.mul(gy, gy)))
    hx, hy = ad.grad(tape, loss, [xv, yv])
    assert _rel_err(hx, _central_diff(lambda x: squared_gradient_norm(x, y0), x0)) < 1e-6
    assert _rel_err(hy, _central_diff(lambda y: squared_gradient_norm(x0, y), y0)) < 1e-6


def test_reciprocal_of_zero_is_an_autodiff_error():
    with pytest.raises(AutodiffError):
        ad.reciprocal(Tape().leaf(np.array([1.0, 0.0])))


def test_relu_derivative_at_zero_is_zero():
    tape = Tape()
    x = tape.leaf(np.array([-1.0, 0.0, 2.0]))
    [g] = ad.grad(tape, ad.total(ad.relu(x)), [x])
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_concat_and_slice_route_gradients():
    tape = Tape()
    a, b = tape.leaf(np.ones((2, 2))), tape.leaf(np.ones((2, 1)))
    c = ad.concat([a, b])
    out = ad.total(ad.mul(ad.slice_cols(c, 1, 3), ad.slice_cols(c, 1, 3)))
    ga, gb = ad.grad(tape, out, [a, b])
    np.testing.assert_array_equal(ga, [[0.0, 2.0], [0.0, 2.0]])
    np.testing.assert_array_equal(gb, [[2.0], [2.0]])


# ── Second order ──

def test_input_gradient_is_differentiable_in_parameters():
    # f(x; w) = sum tanh(x w);  df/dx = (1 - tanh^2(x w)) w^T
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 1))
    w0[0, 0] = -abs(w0[0, 0])      # keeps the penalty active

    def penalty(w, x=x0):
        tape = Tape()
        wv, xv = tape.leaf(w), tape.leaf(x)
        gx = ad.grad_as_expression(tape, ad.total(ad.tanh(ad.matmul(xv, wv))), xv)
        loss = ad.mean(ad.relu(ad.neg(ad.slice_cols(gx, 0, 1))))
        return tape, wv, loss

    tape, wv, loss = penalty(w0)
    [g] = ad.grad(tape, loss, [wv])
    fd = _central_diff(lambda w: penalty(w)[2].item(), w0)
    assert _rel_err(g, fd) < 1e-6


def test_input_gradient_expression_matches_numeric_gradient():
    rng = np.random.default_rng(3)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(6, 3)))
    w1, w2 = tape.leaf(rng.normal(size=(3, 8))), tape.leaf(rng.normal(size=(8, 1)))
    out = ad.total(ad.matmul(ad.sigmoid(ad.matmul(x, w1)), w2))
    expr = ad.grad_as_expression(tape, out, x)
    [numeric] = ad.grad(tape, out, [x])
    np.testing.assert_allclose(expr.value, numeric, rtol=1e-12, atol=1e-14)


# ── Tape ──

def test_replay_reproduces_and_overrides():
    tape = Tape()
    x = tape.leaf(np.array([0.5, -1.0]))
    out = ad.total(ad.mul(ad.tanh(x), x))
    values = tape.replay()
    assert values[out.index] == pytest.approx(out.item())
    changed = tape.replay({x.index: np.array([1.0, 2.0])})
    assert changed[out.index] == pytest.approx(np.tanh(1.0) + 2.0 * np.tanh(2.0))


def test_output_must_be_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(AutodiffError):
        ad.grad(tape, ad.tanh(x), [x])


def test_operands_from_another_tape_are_rejected():
    a, b = Tape(), Tape()
    with pytest.raises(AutodiffError):
        ad.add(a.leaf(np.ones(2)), b.leaf(np.ones(2)))


def test_shape_mismatch_is_an_autodiff_error():
    tape = Tape()
    with pytest.raises(AutodiffError):
        ad.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 3))))


def test_non_finite_leaf_rejected():
    with pytest.raises(AutodiffError):
        Tape().leaf(np.array([np.inf]))
