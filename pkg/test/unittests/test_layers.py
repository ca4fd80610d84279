import math
import unittest

import numpy as np


def small_spec():
    from orientnet.netspec import build_desk_net
    return build_desk_net(32, widths=(4, 8), fc_width=16)


def finite_difference(func, x, eps=1e-3):
    """Central differences over every element of a float32 array."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        high, plus = float(x[idx]), func(x)
        x[idx] = orig - eps
        low, minus = float(x[idx]), func(x)
        x[idx] = orig
        grad[idx] = (plus - minus) / (high - low)
    return grad


def rel_error(a, b):
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + 1e-12)


def weighted_sum(out, r):
    return float((np.asarray(out, dtype=np.float64) * r).sum())


def small_network(seed=0):
    from orientnet.layers import Network
    from orientnet.netspec import init_weights
    spec = small_spec()
    return Network(spec, init_weights(spec, np.random.default_rng(seed),
                                      scheme="he"))


class TestSoftmax(unittest.TestCase):
    def test_uniform(self):
        from orientnet.layers import softmax
        p = softmax(np.zeros((2, 4), dtype=np.float32))
        np.testing.assert_allclose(p, 0.25)

    def test_shift_invariance(self):
        from orientnet.layers import softmax
        z = np.array([[1.0, 2.0, 3.0, 4.0]])
        np.testing.assert_allclose(softmax(z), softmax(z + 1000.0))
        self.assertAlmostEqual(float(softmax(z).sum()), 1.0)

    def test_nan(self):
        from orientnet.layers import softmax
        from orientnet.errors import NumericError
        with self.assertRaises(NumericError):
            softmax(np.array([[np.nan, 0.0, 0.0, 0.0]]))


class TestCrossEntropy(unittest.TestCase):
    def test_uniform_logits(self):
        from orientnet.layers import cross_entropy_loss
        z = np.zeros((2, 4), dtype=np.float32)
        loss, grad = cross_entropy_loss(z, [0, 3])
        self.assertAlmostEqual(loss, math.log(4), places=6)
        expected = np.full((2, 4), 0.25)
        expected[0, 0] -= 1
        expected[1, 3] -= 1
        np.testing.assert_allclose(grad, expected / 2, atol=1e-7)

    def test_confident_prediction(self):
        from orientnet.layers import cross_entropy_loss
        z = np.array([[50.0, 0.0, 0.0, 0.0]])
        loss, _ = cross_entropy_loss(z, [0])
        self.assertGreaterEqual(loss, 0.0)
        self.assertLess(loss, 1e-6)
        loss, _ = cross_entropy_loss(z, [1])
        self.assertAlmostEqual(loss, 50.0, places=4)

    def test_gradient(self):
        from orientnet.layers import cross_entropy_loss
        rng = np.random.default_rng(0)
        z = rng.standard_normal((3, 4))
        labels = [2, 0, 1]
        _, grad = cross_entropy_loss(z, labels)
        eps = 1e-6
        for i in range(3):
            for j in range(4):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += eps
                zm[i, j] -= eps
                num = (cross_entropy_loss(zp, labels)[0] -
                       cross_entropy_loss(zm, labels)[0]) / (2 * eps)
                self.assertAlmostEqual(grad[i, j], num, places=5)

    def test_float32_gradient(self):
        from orientnet.layers import cross_entropy_loss
        rng = np.random.default_rng(40)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            z = (rng.standard_normal((n, 4)) * 2).astype(np.float32)
            labels = rng.integers(0, 4, size=n).tolist()
            _, grad = cross_entropy_loss(z, labels)
            self.assertEqual(grad.dtype, np.float32)
            numeric = finite_difference(
                lambda v: cross_entropy_loss(v.astype(np.float64), labels)[0], z)
            self.assertLess(rel_error(grad, numeric), 1e-3)

    def test_bad_labels(self):
        from orientnet.layers import cross_entropy_loss
        from orientnet.errors import LabelError, ShapeError
        z = np.zeros((2, 4))
        with self.assertRaises(LabelError) as ctx:
            cross_entropy_loss(z, [0, 4])
        self.assertEqual(ctx.exception.index, 1)
        with self.assertRaises(LabelError):
            cross_entropy_loss(z, [-1, 0])
        with self.assertRaises(ShapeError):
            cross_entropy_loss(z, [0])


class TestDropout(unittest.TestCase):
    def test_eval_is_identity(self):
        from orientnet.layers import dropout_forward
        x = np.ones((4, 10), dtype=np.float32)
        out, mask = dropout_forward(x, 0.5, train=False)
        self.assertIs(out, x)
        self.assertIsNone(mask)

    def test_train_scales_survivors(self):
        from orientnet.layers import dropout_forward
        x = np.ones((100, 100), dtype=np.float32)
        out, mask = dropout_forward(x, 0.5, True, np.random.default_rng(0))
        self.assertEqual(set(np.unique(out).tolist()), {0.0, 2.0})
        self.assertAlmostEqual(float(out.mean()), 1.0, delta=0.05)
        np.testing.assert_array_equal(out, x * mask)

    def test_invalid(self):
        from orientnet.layers import dropout_forward
        from orientnet.errors import UsageError
        x = np.ones(3, dtype=np.float32)
        with self.assertRaises(UsageError):
            dropout_forward(x, 1.0, True, np.random.default_rng(0))
        with self.assertRaises(UsageError):
            dropout_forward(x, 0.5, True, None)

    def test_gradient_with_fixed_mask(self):
        from orientnet.layers import Dropout
        from orientnet.netspec import dropout
        rng = np.random.default_rng(41)
        for seed in range(20):
            x = rng.standard_normal((3, 6)).astype(np.float32)
            r = rng.standard_normal(x.shape)
            layer = Dropout(dropout("drop", 0.4))
            layer.forward(x, True, np.random.default_rng(seed))
            analytic = layer.backward(r.astype(np.float32))

            def loss(v):
                out = Dropout(dropout("drop", 0.4)).forward(
                    v, True, np.random.default_rng(seed))
                return weighted_sum(out, r)

            self.assertLess(rel_error(analytic, finite_difference(loss, x)), 1e-3)


class TestFullyConnected(unittest.TestCase):
    def test_gradient(self):
        from orientnet.layers import (fully_connected_backward,
                                      fully_connected_forward)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((5, 2))
        b = rng.standard_normal(2)
        r = rng.standard_normal((3, 2))
        gx, gw, gb = fully_connected_backward(r, x, w)
        np.testing.assert_allclose(gx, r @ w.T)
        np.testing.assert_allclose(gw, x.T @ r)
        np.testing.assert_allclose(gb, r.sum(axis=0))
        np.testing.assert_allclose(fully_connected_forward(x, w, b), x @ w + b)

    def test_float32_finite_differences(self):
        from orientnet.layers import (fully_connected_backward,
                                      fully_connected_forward)
        rng = np.random.default_rng(42)
        for _ in range(20):
            n, d, m = (int(v) for v in rng.integers(1, 6, size=3))
            x = rng.standard_normal((n, d)).astype(np.float32)
            w = rng.standard_normal((d, m)).astype(np.float32)
            b = rng.standard_normal(m).astype(np.float32)
            r = rng.standard_normal((n, m))
            gx, gw, gb = fully_connected_backward(r.astype(np.float32), x, w)
            pairs = (
                (gx, x, lambda v: weighted_sum(fully_connected_forward(v, w, b), r)),
                (gw, w, lambda v: weighted_sum(fully_connected_forward(x, v, b), r)),
                (gb, b, lambda v: weighted_sum(fully_connected_forward(x, w, v), r)),
            )
            for analytic, value, loss in pairs:
                self.assertLess(
                    rel_error(analytic, finite_difference(loss, value)), 1e-3)

    def test_shape_errors(self):
        from orientnet.layers import fully_connected_forward
        from orientnet.errors import ShapeError
        with self.assertRaises(ShapeError):
            fully_connected_forward(np.ones((2, 3)), np.ones((4, 2)), np.ones(2))
        with self.assertRaises(ShapeError):
            fully_connected_forward(np.ones((2, 4)), np.ones((4, 2)), np.ones(3))


class TestNetwork(unittest.TestCase):
    def test_forward_shapes(self):
        net = small_network()
        x = np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32)
        z = net.forward(x, record=True)
        self.assertEqual(z.shape, (2, 4))
        self.assertEqual(set(net.activations), {ls.name for ls in net.spec.layers})
        self.assertEqual(net.activations["relu2"].shape, (2, 8, 15, 15))
        probs = net.predict_proba(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)

    def test_full_network_zero_image(self):
        from orientnet.layers import Network
        from orientnet.netspec import build_full_net, init_weights
        spec = build_full_net()
        net = Network(spec, init_weights(spec, np.random.default_rng(0)))
        z = net.forward(np.zeros((1, 3, 256, 256), dtype=np.float32))
        self.assertEqual(z.shape, (1, 4))
        self.assertTrue(np.all(np.isfinite(z)))

    def test_eval_is_deterministic(self):
        net = small_network()
        x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_input_shape_checked(self):
        from orientnet.errors import ShapeError
        net = small_network()
        with self.assertRaises(ShapeError):
            net.forward(np.zeros((1, 3, 16, 16), dtype=np.float32))

    def test_backward_fills_grads(self):
        from orientnet.layers import cross_entropy_loss
        net = small_network()
        x = np.random.default_rng(2).standard_normal((3, 3, 32, 32)).astype(np.float32)
        z = net.forward(x, train=True, rng=np.random.default_rng(0))
        _, grad_z = cross_entropy_loss(z, [0, 1, 2])
        net.backward(grad_z, record=True)
        for layer in net.param_layers:
            for key, value in layer.params.items():
                self.assertEqual(layer.grads[key].shape, value.shape)
        # the output bias gradient is the batch sum of dL/dz
        np.testing.assert_allclose(net["fc4"].grads["bias"], grad_z.sum(axis=0),
                                   rtol=1e-5, atol=1e-7)
        self.assertEqual(net.output_grads["relu2"].shape, (3, 8, 15, 15))
        net.zero_grad()
        self.assertFalse(any(g.any() for layer in net.param_layers
                             for g in layer.grads.values()))

    def test_parameters_are_copies(self):
        net = small_network()
        params = net.parameters()
        params["conv1"]["weight"][...] = 0
        self.assertTrue(net["conv1"].params["weight"].any())
        net.load_parameters(params, layers=["conv1"])
        self.assertFalse(net["conv1"].params["weight"].any())

    def test_missing_parameters(self):
        from orientnet.layers import Network
        from orientnet.netspec import init_weights
        from orientnet.errors import ShapeError
        spec = small_spec()
        params = init_weights(spec, np.random.default_rng(0))
        del params["fc3"]
        with self.assertRaises(ShapeError):
            Network(spec, params)
        params = init_weights(spec, np.random.default_rng(0))
        params["fc4"]["bias"] = np.zeros(5, dtype=np.float32)
        with self.assertRaises(ShapeError):
            Network(spec, params)

    def test_frozen_flags_follow_spec(self):
        net = small_network()
        self.assertTrue(net["conv1"].frozen)
        self.assertFalse(net["conv2"].frozen)
        net.set_frozen(["fc3"])
        self.assertFalse(net["conv1"].frozen)
        self.assertTrue(net["fc3"].frozen)
        with self.assertRaises(KeyError):
            net["nope"]
