import math
import unittest

import numpy as np

from fewseg.exceptions import ShapeError
from fewseg.gradcheck import check_gradients
from fewseg.ops import (
    Conv2dParams,
    add,
    bilinear_resize,
    concat_channels,
    conv2d,
    conv_output_size,
    cross_entropy_spatial,
    elementwise_mul,
    global_avg_pool,
    interpolation_matrix,
    max_pool2d,
    relu,
    reshape,
    resize_array,
    softmax_channels,
    tile,
    weighted_spatial_pool,
    weighted_sum,
)
from fewseg.tensor import Tensor


def reference_conv(x, w, b, stride, dilation, padding):
    channels, height, width = x.shape
    out_ch, _, kh, kw = w.shape
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out_h = conv_output_size(height, kh, stride, dilation, padding)
    out_w = conv_output_size(width, kw, stride, dilation, padding)
    out = np.zeros((out_ch, out_h, out_w))
    for o in range(out_ch):
        for y in range(out_h):
            for x_ in range(out_w):
                total = 0.0 if b is None else b[o]
                for c in range(channels):
                    for i in range(kh):
                        for j in range(kw):
                            total += w[o, c, i, j] * padded[c, y * stride + i * dilation, x_ * stride + j * dilation]
                out[o, y, x_] = total
    return out


def away_from_zero(rng, shape, margin=0.1):
    values = rng.uniform(margin, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


class TestConv2d(unittest.TestCase):
    def test_matches_nested_loops(self) -> None:
        rng = np.random.default_rng(7)
        checked = 0
        dilations = set()
        while checked < 100:
            kernel = int(rng.choice([1, 3, 5]))
            stride = int(rng.integers(1, 3))
            dilation = int(rng.choice([1, 2, 3]))
            padding = int(rng.integers(0, 3))
            height, width = int(rng.integers(6, 10)), int(rng.integers(6, 10))
            if conv_output_size(min(height, width), kernel, stride, dilation, padding) < 1:
                continue
            x = rng.normal(size=(int(rng.integers(1, 4)), height, width))
            w = rng.normal(size=(int(rng.integers(1, 4)), x.shape[0], kernel, kernel))
            b = rng.normal(size=w.shape[0]) if rng.random() < 0.5 else None

            params = Conv2dParams(Tensor(w), None if b is None else Tensor(b), stride, dilation, padding)
            out = conv2d(Tensor(x), params)
            np.testing.assert_allclose(out.data, reference_conv(x, w, b, stride, dilation, padding), atol=1e-10)
            checked += 1
            dilations.add(dilation)

        assert checked == 100
        assert dilations == {1, 2, 3}

    def test_output_size_formula(self) -> None:
        w = Tensor(np.ones((2, 1, 3, 3)))
        out = conv2d(Tensor(np.ones((1, 9, 9))), Conv2dParams(w, stride=2, dilation=2, padding=1))
        assert out.shape == (2, (9 + 2 - 5) // 2 + 1, (9 + 2 - 5) // 2 + 1)

    def test_rejects_channel_mismatch(self) -> None:
        params = Conv2dParams(Tensor(np.ones((2, 3, 3, 3))))
        with self.assertRaises(ShapeError):
            conv2d(Tensor(np.ones((2, 5, 5))), params)

    def test_rejects_empty_output(self) -> None:
        params = Conv2dParams(Tensor(np.ones((1, 1, 5, 5))))
        with self.assertRaises(ShapeError):
            conv2d(Tensor(np.ones((1, 3, 3))), params)

    def test_gradients(self) -> None:
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 7, 7)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)

        def fn(x, w, b):
            return conv2d(x, Conv2dParams(w, b, stride=2, dilation=2, padding=2))

        assert check_gradients(fn, [x, w, b], probes=60) == []


class TestPooling(unittest.TestCase):
    def test_max_pool_values(self) -> None:
        x = Tensor(np.arange(16, dtype=float).reshape(1, 4, 4))
        out = max_pool2d(x, 2, 2)
        np.testing.assert_array_equal(out.data, [[[5.0, 7.0], [13.0, 15.0]]])

    def test_max_pool_tie_routes_to_first(self) -> None:
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        max_pool2d(x, 2, 2).backward(np.ones((1, 1, 1)))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_max_pool_gradients(self) -> None:
        rng = np.random.default_rng(1)
        # Distinct values a step apart keep each window's argmax stable under perturbation.
        values = rng.permutation(2 * 7 * 7).reshape(2, 7, 7) * 0.01
        x = Tensor(values, requires_grad=True)
        assert check_gradients(lambda x: max_pool2d(x, 3, 2), [x], probes=60) == []

    def test_max_pool_rejects_large_window(self) -> None:
        with self.assertRaises(ShapeError):
            max_pool2d(Tensor(np.ones((1, 2, 2))), 3, 2)

    def test_global_avg_pool(self) -> None:
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
        np.testing.assert_allclose(global_avg_pool(x).data, x.data.mean(axis=(1, 2)))
        assert check_gradients(global_avg_pool, [x]) == []

    def test_weighted_spatial_pool(self) -> None:
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        weights = np.zeros((4, 4))
        weights[1:3, 1:3] = 1.0

        out = weighted_spatial_pool(x, weights)
        np.testing.assert_allclose(out.data, x.data[:, 1:3, 1:3].mean(axis=(1, 2)))
        assert check_gradients(lambda x: weighted_spatial_pool(x, weights), [x]) == []


class TestResize(unittest.TestCase):
    def test_same_size_is_identity(self) -> None:
        x = Tensor(np.random.default_rng(4).normal(size=(2, 5, 6)))
        out = bilinear_resize(x, 5, 6)
        np.testing.assert_array_equal(out.data, x.data)
        assert out.data is not x.data

    def test_corners_are_aligned(self) -> None:
        x = np.random.default_rng(5).normal(size=(1, 4, 4))
        out = bilinear_resize(Tensor(x), 7, 10).data
        for (i, j), (oi, oj) in (((0, 0), (0, 0)), ((3, 3), (6, 9)), ((0, 3), (0, 9)), ((3, 0), (6, 0))):
            assert math.isclose(out[0, oi, oj], x[0, i, j], rel_tol=0, abs_tol=1e-12)

    def test_upsample_midpoints(self) -> None:
        out = resize_array(np.array([[0.0, 2.0]]), 1, 3)
        np.testing.assert_allclose(out, [[0.0, 1.0, 2.0]])

    def test_interpolation_rows_sum_to_one(self) -> None:
        for size_in, size_out in ((1, 5), (4, 9), (9, 4), (8, 8)):
            np.testing.assert_allclose(interpolation_matrix(size_in, size_out).sum(axis=1), 1.0)

    def test_resize_array_matches_tensor_op(self) -> None:
        x = np.random.default_rng(6).normal(size=(3, 5, 4))
        np.testing.assert_allclose(resize_array(x, 9, 11), bilinear_resize(Tensor(x), 9, 11).data)

    def test_gradients(self) -> None:
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        assert check_gradients(lambda x: bilinear_resize(x, 9, 7), [x]) == []
        assert check_gradients(lambda x: bilinear_resize(x, 2, 3), [x]) == []
        assert check_gradients(lambda x: bilinear_resize(x, 4, 5), [x]) == []


class TestElementwise(unittest.TestCase):
    def test_relu(self) -> None:
        rng = np.random.default_rng(8)
        x = Tensor(away_from_zero(rng, (2, 4, 4)), requires_grad=True)
        np.testing.assert_array_equal(relu(x).data, np.maximum(x.data, 0.0))
        assert check_gradients(relu, [x]) == []

    def test_add_and_mul(self) -> None:
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        assert check_gradients(add, [a, b]) == []
        assert check_gradients(elementwise_mul, [a, b]) == []

        with self.assertRaises(ShapeError):
            add(a, Tensor(np.ones((2, 3, 4))))

    def test_concat_channels(self) -> None:
        rng = np.random.default_rng(10)
        a = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)
        out = concat_channels(a, b)
        assert out.shape == (3, 3, 3)
        np.testing.assert_array_equal(out.data[2], b.data[0])
        assert check_gradients(concat_channels, [a, b]) == []

        with self.assertRaises(ShapeError):
            concat_channels(a, Tensor(np.ones((1, 3, 4))))

    def test_reshape_and_tile(self) -> None:
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        assert check_gradients(lambda x: reshape(x, 3, 4), [x]) == []

        vector = Tensor(rng.normal(size=4), requires_grad=True)
        tiled = tile(vector, 2, 3)
        assert tiled.shape == (4, 2, 3)
        np.testing.assert_array_equal(tiled.data[:, 1, 2], vector.data)
        assert check_gradients(lambda v: tile(v, 2, 3), [vector]) == []

    def test_weighted_sum(self) -> None:
        rng = np.random.default_rng(12)
        features = [Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True) for _ in range(3)]
        weights = Tensor(rng.normal(size=3), requires_grad=True)

        out = weighted_sum(features, weights)
        expected = sum(w * f.data for w, f in zip(weights.data, features))
        np.testing.assert_allclose(out.data, expected)
        assert check_gradients(lambda w, *f: weighted_sum(f, w), [weights, *features]) == []


class TestSoftmaxAndLoss(unittest.TestCase):
    def test_softmax_sums_to_one(self) -> None:
        rng = np.random.default_rng(13)
        probs = softmax_channels(Tensor(rng.normal(scale=50.0, size=(2, 6, 6)))).data
        np.testing.assert_allclose(probs.sum(axis=0), 1.0)
        assert np.isfinite(probs).all()

    def test_softmax_large_logits(self) -> None:
        logits = np.stack([np.full((3, 3), 1e4), np.full((3, 3), -1e4), np.zeros((3, 3))])
        probs = softmax_channels(Tensor(logits)).data
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs.sum(axis=0), 1.0)
        np.testing.assert_allclose(probs[0], 1.0)

        equal = softmax_channels(Tensor([1e4, 1e4])).data
        np.testing.assert_allclose(equal, [0.5, 0.5])

    def test_softmax_vector(self) -> None:
        probs = softmax_channels(Tensor([0.0, math.log(3.0)])).data
        np.testing.assert_allclose(probs, [0.25, 0.75])

    def test_softmax_gradients(self) -> None:
        x = Tensor(np.random.default_rng(14).normal(size=(3, 4, 4)), requires_grad=True)
        assert check_gradients(softmax_channels, [x]) == []

    def test_uniform_prediction_costs_ln2(self) -> None:
        pred = bilinear_resize(Tensor(np.full((2, 4, 4), 0.5)), 8, 8)
        target = np.random.default_rng(15).integers(0, 2, size=(8, 8))
        assert math.isclose(cross_entropy_spatial(pred, target).item(), math.log(2.0), rel_tol=1e-12)

    def test_loss_is_clamped(self) -> None:
        pred = Tensor(np.stack([np.ones((2, 2)), np.zeros((2, 2))]), requires_grad=True)
        loss = cross_entropy_spatial(pred, np.ones((2, 2), dtype=int))
        assert math.isclose(loss.item(), -math.log(1e-7))

        loss.backward()
        np.testing.assert_array_equal(pred.grad, np.zeros((2, 2, 2)))

    def test_loss_gradients_reach_logits(self) -> None:
        rng = np.random.default_rng(16)
        logits = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
        target = rng.integers(0, 2, size=(5, 5))
        fn = lambda x: cross_entropy_spatial(softmax_channels(x), target)
        assert check_gradients(fn, [logits]) == []

    def test_loss_rejects_bad_targets(self) -> None:
        pred = Tensor(np.full((2, 3, 3), 0.5))
        with self.assertRaises(ShapeError):
            cross_entropy_spatial(pred, np.zeros((3, 4), dtype=int))
        with self.assertRaises(ShapeError):
            cross_entropy_spatial(pred, np.full((3, 3), 2))


class TestGradcheck(unittest.TestCase):
    def test_reports_wrong_gradient(self) -> None:
        x = Tensor(np.random.default_rng(17).normal(size=(1, 3, 3)), requires_grad=True)
        failures = check_gradients(lambda x: elementwise_mul(x, Tensor(x.data.copy())), [x], probes=20)
        assert failures
        assert all(probe.relative_error > 1e-3 for probe in failures)

    def test_needs_a_differentiable_input(self) -> None:
        with self.assertRaises(ValueError):
            check_gradients(relu, [Tensor(np.ones((1, 2, 2)))])


if __name__ == "__main__":
    unittest.main()
