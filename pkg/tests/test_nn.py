import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smsfr.errors import ShapeError
from smsfr.models import verify
from smsfr.nn import (
    Adam,
    Conv2D,
    Linear,
    adam_step,
    conv2d,
    grad_check,
    leaky_relu,
    leaky_relu_backward,
    linear,
    max_pool,
    max_pool_backward,
    mse,
    softmax,
    softmax_ce,
    xavier_uniform,
)
from smsfr.nn.gradcheck import relative_error


def loop_conv(x, w, b):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    out = np.zeros((h - kh + 1, wd - kw + 1, cout))
    for i in range(h - kh + 1):
        for j in range(wd - kw + 1):
            for o in range(cout):
                acc = b[o]
                for a in range(kh):
                    for c in range(kw):
                        for k in range(cin):
                            acc += x[i + a, j + c, k] * w[a, c, k, o]
                out[i, j, o] = acc
    return out


def loop_pool(x, ph, pw):
    h, w, c = x.shape
    out = np.zeros((h // ph, w // pw, c))
    for i in range(h // ph):
        for j in range(w // pw):
            for k in range(c):
                out[i, j, k] = max(x[i * ph + a, j * pw + b, k] for a in range(ph) for b in range(pw))
    return out


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((4, 5, 2))
        w = np.zeros((1, 1, 2, 2))
        w[0, 0] = np.eye(2)
        np.testing.assert_array_equal(conv2d(x, w, np.zeros(2)), x)

    def test_ones(self):
        assert conv2d(np.ones((2, 2, 1)), np.ones((2, 2, 1, 1)))[0, 0, 0] == 4.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.standard_normal((8, 8, 3)), rng.standard_normal((5, 3, 3, 4)), rng.standard_normal(4)
        np.testing.assert_allclose(conv2d(x, w, b), loop_conv(x, w, b), rtol=0, atol=1e-12)

    def test_batched_equals_single(self):
        rng = np.random.default_rng(2)
        x, w = rng.standard_normal((3, 9, 7, 2)), rng.standard_normal((5, 3, 2, 3))
        out = conv2d(x, w)
        for k in range(3):
            np.testing.assert_allclose(out[k], conv2d(x[k], w), rtol=0, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(np.ones((5, 5, 2)), np.ones((3, 3, 3, 1)))

    def test_kernel_too_big(self):
        with pytest.raises(ShapeError, match="4x4"):
            conv2d(np.ones((4, 4, 1)), np.ones((5, 3, 1, 1)))


class TestActivationsAndPooling:
    def test_leaky(self):
        x = np.array([2.0, 0.0, -1.0])
        np.testing.assert_array_equal(leaky_relu(x), [2.0, 0.0, -0.01])
        assert leaky_relu_backward(np.ones(1), np.array([-2.0]))[0] == 0.01
        assert leaky_relu_backward(np.ones(1), np.array([3.0]))[0] == 1.0

    def test_pool_pair(self):
        out, _ = max_pool(np.array([3.0, 7.0]).reshape(2, 1, 1))
        assert out.item() == 7.0

    @pytest.mark.parametrize("ph, pw", [(2, 1), (2, 2), (3, 2)])
    def test_pool_ties_route_to_first(self, ph, pw):
        x = np.full((1, ph, pw, 1), 5.0)
        out, idx = max_pool(x, ph, pw)
        dx = max_pool_backward(np.ones_like(out), idx, x.shape, ph, pw)
        expected = np.zeros_like(x)
        expected[0, 0, 0, 0] = 1.0
        np.testing.assert_array_equal(dx, expected)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), ph=st.integers(1, 3), pw=st.integers(1, 3))
    def test_pool_loop_oracle(self, seed, ph, pw):
        x = np.random.default_rng(seed).standard_normal((7, 8, 2))
        out, _ = max_pool(x, ph, pw)
        np.testing.assert_array_equal(out, loop_pool(x, ph, pw))

    def test_pool_too_big(self):
        with pytest.raises(ShapeError):
            max_pool(np.ones((1, 1, 1, 1)), 2, 1)


class TestLinear:
    def test_identity(self):
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(linear(x, np.eye(3), np.zeros(3)), x)

    def test_zero_weights(self):
        np.testing.assert_array_equal(linear(np.ones((1, 3)), np.zeros((3, 2)), np.array([4.0, 5.0])), [[4.0, 5.0]])

    def test_oracle(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.standard_normal((4, 6)), rng.standard_normal((6, 3)), rng.standard_normal(3)
        expected = [[sum(x[i, k] * w[k, j] for k in range(6)) + b[j] for j in range(3)] for i in range(4)]
        np.testing.assert_allclose(linear(x, w, b), expected, rtol=0, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            linear(np.ones((1, 3)), np.ones((4, 2)))


class TestLosses:
    def test_ce_ln2(self):
        loss, p, _ = softmax_ce(np.zeros(2), 1)
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        np.testing.assert_array_equal(p, [0.5, 0.5])

    def test_ce_no_overflow(self):
        loss, p, g = softmax_ce(np.array([1000.0, 0.0]), 0)
        np.testing.assert_array_equal(p, [1.0, 0.0])
        assert loss == 0.0 and np.all(np.isfinite(g))

    def test_ce_binary_form(self):
        logits = np.array([[0.3, -1.2], [2.0, 0.5]])
        y = np.array([1, 0])
        loss, p, _ = softmax_ce(logits, y)
        yhat = p[:, 1]
        expected = np.mean(-y * np.log(yhat) - (1 - y) * np.log(1 - yhat))
        assert loss == pytest.approx(expected, rel=1e-14)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=2))
    def test_softmax_bounds(self, logits):
        p = softmax(np.array(logits))
        assert np.all((p >= 0) & (p <= 1))
        assert abs(p.sum() - 1) < 1e-9

    def test_ce_gradient(self):
        logits = np.array([[0.3, -0.7], [1.1, 0.2], [-0.4, -0.5]])
        y = np.array([1, 0, 1])
        _, _, g = softmax_ce(logits, y)
        rep = grad_check(lambda: softmax_ce(logits, y)[0], {"z": logits}, {"z": g}, tolerance=1e-6)
        assert rep.passed, rep.lines()

    def test_mse_values(self):
        assert mse(np.array([0.03]), np.array([0.03]))[0] == 0.0
        assert mse(np.array([0.05]), np.array([0.03]))[0] == pytest.approx(0.0004, abs=1e-18)
        _, g = mse(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
        np.testing.assert_array_equal(g, [1.0, 2.0])

    def test_mse_gradient(self):
        pred, target = np.array([0.1, -0.2, 0.4]), np.array([0.0, 0.1, 0.3])
        rep = grad_check(lambda: mse(pred, target)[0], {"p": pred}, {"p": mse(pred, target)[1]}, tolerance=1e-6)
        assert rep.passed


class TestAdamXavier:
    def test_zero_gradient_fixed_point(self):
        p = np.array([1.0, -2.0])
        new, m, v = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 1)
        np.testing.assert_array_equal(new, p)

    def test_single_step_closed_form(self):
        # after one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps)
        g = np.array([0.5, -3.0])
        new, _, _ = adam_step(np.zeros(2), g, np.zeros(2), np.zeros(2), 1, lr=0.01)
        np.testing.assert_allclose(new, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_defaults(self):
        import inspect
        sig = inspect.signature(adam_step).parameters
        assert (sig["lr"].default, sig["beta1"].default, sig["beta2"].default, sig["eps"].default) == (3e-5, 0.9, 0.999, 1e-8)

    def test_optimizer_deterministic(self):
        def run():
            rng = np.random.default_rng(0)
            params = {"w": rng.standard_normal((3, 3))}
            opt = Adam(params, lr=1e-2)
            for k in range(5):
                opt.step(params, {"w": np.sin(params["w"] + k)})
            return params["w"]

        assert run().tobytes() == run().tobytes()

    def test_xavier_bound(self):
        w = xavier_uniform((3, 3), np.random.default_rng(0))
        assert np.all(np.abs(w) <= 1.0)

    def test_xavier_variance(self):
        w = xavier_uniform((100, 1000), np.random.default_rng(1))
        assert w.var() == pytest.approx(2 / 1100, rel=0.05)

    def test_xavier_conv_fans(self):
        w = xavier_uniform((5, 3, 4, 8), np.random.default_rng(2))
        assert np.abs(w).max() <= math.sqrt(6 / (15 * 4 + 15 * 8))

    def test_xavier_seeded(self):
        a = xavier_uniform((4, 4), np.random.default_rng(5))
        b = xavier_uniform((4, 4), np.random.default_rng(5))
        assert a.tobytes() == b.tobytes()


class TestGradCheck:
    def test_every_layer(self):
        for rep in verify.layer_reports():
            assert rep.passed, rep.lines()
            assert rep.max_error < 1e-4

    @pytest.mark.parametrize("kind", ["msr", "smsfr"])
    def test_full_graph(self, kind):
        rep = verify.model_report(kind)
        assert rep.passed, rep.lines()
        assert not any(rep.skipped.values())

    def test_corrupted_backward_fails(self):
        assert not verify.corrupted_report().passed

    def test_corrupted_graph_fails(self, monkeypatch):
        from smsfr.nn import layers

        original = layers.LeakyReLU.backward
        monkeypatch.setattr(layers.LeakyReLU, "backward", lambda self, d: original(self, d) * 1.01)
        assert not verify.model_report("smsfr", max_points=2).passed

    def test_non_finite_loss_fails(self):
        x = np.ones(2)
        assert not grad_check(lambda: float("nan"), {"x": x}, {"x": x}).passed

    def test_needs_double(self):
        x = np.ones(2, np.float32)
        assert not grad_check(lambda: float(x.sum()), {"x": x}, {"x": np.ones(2)}).passed

    def test_relative_error(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 1.0

    def test_layer_forward_is_pure(self):
        rng = np.random.default_rng(0)
        conv, lin = Conv2D(5, 3, 1, 2, rng), Linear(4, 2, rng)
        x = rng.standard_normal((2, 6, 4, 1))
        assert conv.forward(x).tobytes() == conv.forward(x).tobytes()
        v = rng.standard_normal((3, 4))
        assert lin.forward(v).tobytes() == lin.forward(v).tobytes()
