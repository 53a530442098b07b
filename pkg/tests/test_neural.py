import math
import unittest

import numpy as np

from models.errors import NumericError, ShapeError
from neural.core import (
    Dense,
    LstmParams,
    Parameter,
    affine,
    affine_backward,
    bilstm,
    bilstm_forward,
    lstm_backward,
    lstm_forward,
    lstm_step,
    sigmoid,
)
from neural.gradcheck import grad_check
from neural.optim import Adam


def zero_lstm(d_in, hidden):
    params = LstmParams.create("lstm", d_in, hidden, np.random.default_rng(0))
    for p in params.parameters():
        p.value[...] = 0.0
    return params


def random_lstm(d_in, hidden, seed, name="lstm"):
    rng = np.random.default_rng(seed)
    params = LstmParams.create(name, d_in, hidden, rng)
    for p in params.parameters():
        p.value[...] = rng.normal(0.0, 0.5, p.shape)
    return params


class TestAffine(unittest.TestCase):
    def test_identity(self):
        W = Parameter("W", np.eye(3))
        b = Parameter("b", np.zeros(3))
        x = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(affine(x, W, b), x)

    def test_hand_example(self):
        W = Parameter("W", np.eye(2))
        b = Parameter("b", np.array([3.0, 4.0]))
        np.testing.assert_array_equal(affine(np.array([1.0, 2.0]), W, b), [4.0, 6.0])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            affine(np.ones(4), Parameter("W", np.ones((3, 2))), Parameter("b", np.zeros(2)))

    def test_backward(self):
        rng = np.random.default_rng(0)
        layer = Dense.create("dense", 3, 4, rng)
        layer.b.value[...] = rng.normal(size=4)
        x = rng.normal(size=(5, 3))
        r = rng.normal(size=(5, 4))

        def loss():
            out = layer.forward(x)
            layer.backward(x, r)
            return float(np.sum(out * r))

        self.assertLess(grad_check(loss, layer.parameters()), 1e-6)

    def test_input_gradient(self):
        W = Parameter("W", np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Parameter("b", np.zeros(2))
        dx = affine_backward(np.ones((1, 2)), W, b, np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(dx, [[3.0, 7.0]])
        np.testing.assert_array_equal(b.grad, [1.0, 1.0])


class TestLstmStep(unittest.TestCase):
    def test_sigmoid_extremes(self):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_zero_network(self):
        params = zero_lstm(3, 2)
        h, c = lstm_step(np.array([1.0, -2.0, 3.0]), np.zeros(2), np.zeros(2), params)
        np.testing.assert_array_equal(h, np.zeros(2))
        np.testing.assert_array_equal(c, np.zeros(2))

    def test_saturated_forget_gate(self):
        params = zero_lstm(1, 1)
        params.b.value[1] = 50.0
        h, c = lstm_step(np.array([0.7]), np.zeros(1), np.ones(1), params)
        # i = o = 0.5, g = tanh(0) = 0, f = sigmoid(50)
        self.assertAlmostEqual(float(c[0]), 1.0, places=12)
        self.assertAlmostEqual(float(h[0]), 0.5 * math.tanh(1.0), places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            lstm_step(np.ones(4), np.zeros(2), np.zeros(2), zero_lstm(3, 2))

    def test_gradients(self):
        params = random_lstm(3, 2, seed=1)
        x = np.random.default_rng(1).normal(size=(2, 4, 3))
        mask = np.array([[True] * 4, [True, True, True, False]])

        def loss():
            out, trace = lstm_forward(x, mask, params)
            lstm_backward(trace, np.ones_like(out), params)
            return float(np.sum(out))

        self.assertLess(grad_check(loss, params.parameters()), 1e-6)

    def test_gradients_across_seeds(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                params = random_lstm(3, 2, seed=100 + seed)
                rng = np.random.default_rng(seed)
                x = rng.normal(size=(2, 4, 3))
                d_out = rng.normal(size=(2, 4, 2))
                mask = np.ones((2, 4), dtype=bool)
                mask[1, int(rng.integers(1, 5)):] = False

                def loss():
                    out, trace = lstm_forward(x, mask, params)
                    lstm_backward(trace, d_out, params)
                    return float(np.sum(out * d_out))

                self.assertLess(grad_check(loss, params.parameters(), floor=1e-4), 1e-5)


class TestBiLstm(unittest.TestCase):
    def test_length_one(self):
        fw = random_lstm(3, 2, seed=2, name="fw")
        bw = random_lstm(3, 2, seed=3, name="bw")
        x = np.array([0.1, 0.2, 0.3])
        out = bilstm([x], [True], fw, bw)
        h_fw, _ = lstm_step(x, np.zeros(2), np.zeros(2), fw)
        h_bw, _ = lstm_step(x, np.zeros(2), np.zeros(2), bw)
        np.testing.assert_allclose(out[0], np.concatenate([h_fw, h_bw]), rtol=0, atol=1e-15)

    def test_masked_steps_are_zero(self):
        fw = random_lstm(2, 3, seed=4, name="fw")
        bw = random_lstm(2, 3, seed=5, name="bw")
        seq = [np.ones(2), -np.ones(2), np.zeros(2)]
        out = bilstm(seq, [True, True, False], fw, bw)
        np.testing.assert_array_equal(out[2], np.zeros(6))

    def test_padding_is_inert(self):
        fw = random_lstm(3, 4, seed=6, name="fw")
        bw = random_lstm(3, 4, seed=7, name="bw")
        rng = np.random.default_rng(8)
        x = rng.normal(size=(1, 5, 3))
        base, _ = bilstm_forward(x, np.ones((1, 5), dtype=bool), fw, bw)
        for extra in range(1, 11):
            padded = np.concatenate([x, rng.normal(size=(1, extra, 3))], axis=1)
            mask = np.zeros((1, 5 + extra), dtype=bool)
            mask[0, :5] = True
            out, _ = bilstm_forward(padded, mask, fw, bw)
            np.testing.assert_array_equal(out[:, :5], base)
            np.testing.assert_array_equal(out[:, 5:], 0.0)

    def test_palindrome_symmetry(self):
        params = random_lstm(2, 3, seed=9)
        a, b = np.array([0.3, -0.7]), np.array([1.1, 0.4])
        out = bilstm([a, b, a], [True] * 3, params, params)
        for t in range(3):
            np.testing.assert_allclose(out[t][:3], out[2 - t][3:], rtol=0, atol=1e-15)

    def test_non_prefix_mask(self):
        params = random_lstm(2, 2, seed=0)
        with self.assertRaises(ShapeError):
            bilstm([np.ones(2)] * 3, [True, False, True], params, params)


class TestAdam(unittest.TestCase):
    def test_zero_gradient(self):
        p = Parameter("w", np.array([1.0, -2.0]))
        optim = Adam([p], lr=0.1)
        optim.step()
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        self.assertEqual(optim.t, 1)

    def test_zero_learning_rate(self):
        rng = np.random.default_rng(4)
        params = [Parameter("w", rng.normal(size=(3, 2))), Parameter("b", rng.normal(size=2))]
        before = [p.value.copy() for p in params]
        optim = Adam(params, lr=0.0)
        for _ in range(5):
            for p in params:
                p.grad[...] = rng.normal(scale=10.0, size=p.shape)
            optim.step()
        for p, value in zip(params, before):
            np.testing.assert_array_equal(p.value, value)
        self.assertEqual(optim.t, 5)

    def test_first_step(self):
        p = Parameter("w", np.array([0.0]))
        optim = Adam([p], lr=0.1, beta1=0.9, beta2=0.999)
        p.grad[...] = 1.0
        optim.step()
        self.assertAlmostEqual(float(p.value[0]), -0.1, places=8)
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_clipping(self):
        clipped = Parameter("w", np.zeros(2))
        plain = Parameter("w", np.zeros(2))
        a = Adam([clipped], lr=0.01, clip_norm=5.0)
        b = Adam([plain], lr=0.01, clip_norm=5.0)
        clipped.grad[...] = [30.0, 40.0]
        plain.grad[...] = [3.0, 4.0]
        for _ in range(3):
            a.step()
            b.step()
            clipped.grad[...] = [30.0, 40.0]
            plain.grad[...] = [3.0, 4.0]
        np.testing.assert_allclose(clipped.value, plain.value, rtol=1e-12)

    def test_non_finite_gradient(self):
        p = Parameter("lstm.fw.W", np.zeros(2))
        p.grad[0] = np.nan
        with self.assertRaises(NumericError) as ctx:
            Adam([p]).step()
        self.assertIn("lstm.fw.W", str(ctx.exception))


class TestGradCheck(unittest.TestCase):
    def test_quadratic(self):
        x = Parameter("x", np.array([3.0]))

        def loss():
            x.grad += x.value
            return float(0.5 * x.value[0] ** 2)

        self.assertLess(grad_check(loss, [x]), 1e-9)

    def test_corrupted_backward(self):
        x = Parameter("x", np.array([3.0]))

        def loss():
            x.grad += 2.0 * x.value
            return float(0.5 * x.value[0] ** 2)

        self.assertAlmostEqual(grad_check(loss, [x]), 0.5, places=6)


if __name__ == "__main__":
    unittest.main()
