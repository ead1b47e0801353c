import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dilearn.errors import DataError, ShapeError
from dilearn.layers import (
    EVAL,
    TRAIN,
    BnParams,
    LinearParams,
    batchnorm_forward,
    binary_cross_entropy_loss,
    cross_entropy_loss,
    linear_forward,
    sigmoid,
)
from dilearn.tensor import Tensor, precision


def bn_with(gamma, beta, mean=None, var=None):
    c = len(gamma)
    return BnParams(
        Tensor(gamma),
        Tensor(beta),
        np.zeros(c) if mean is None else np.asarray(mean, dtype=np.float64),
        np.ones(c) if var is None else np.asarray(var, dtype=np.float64),
    )


def two_point():
    return Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))


class TestBatchNorm:
    def test_two_point_symmetry(self):
        k = 1 / math.sqrt(1 + 1e-5)
        out = batchnorm_forward(two_point(), bn_with([1.0], [0.0]), TRAIN)
        np.testing.assert_allclose(out.data.ravel(), [-k, k], rtol=1e-6)

    def test_affine_applied(self):
        k = 1 / math.sqrt(1 + 1e-5)
        out = batchnorm_forward(two_point(), bn_with([2.0], [1.0]), TRAIN)
        np.testing.assert_allclose(out.data.ravel(), [1 - 2 * k, 1 + 2 * k], rtol=1e-6)

    def test_eval_identity_stats(self):
        x = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
        out = batchnorm_forward(Tensor(x), bn_with([1.0, 1.0], [0.0, 0.0]), EVAL)
        np.testing.assert_allclose(out.data, x / math.sqrt(1 + 1e-5), rtol=1e-5)

    def test_eval_leaves_stats(self):
        p = bn_with([1.0], [0.0], [0.5], [2.0])
        batchnorm_forward(two_point(), p, EVAL)
        assert p.running_mean[0] == 0.5 and p.running_var[0] == 2.0

    def test_running_update_uses_biased_variance(self):
        p = bn_with([1.0], [0.0])
        batchnorm_forward(two_point(), p, TRAIN, update_stats=True)
        assert p.running_mean[0] == pytest.approx(0.2)
        assert p.running_var[0] == pytest.approx(0.9 + 0.1 * 1.0)

    def test_update_stats_off(self):
        p = bn_with([1.0], [0.0])
        batchnorm_forward(two_point(), p, TRAIN, update_stats=False)
        assert p.running_mean[0] == 0.0

    def test_running_stats_converge(self):
        x = np.random.default_rng(1).standard_normal((4, 3, 5, 5)) * 2 + 1
        p = BnParams.init(3)
        for _ in range(100):
            batchnorm_forward(Tensor(x), p, TRAIN)
        np.testing.assert_allclose(p.running_mean, x.mean(axis=(0, 2, 3)), atol=1e-4)
        np.testing.assert_allclose(p.running_var, x.var(axis=(0, 2, 3)), atol=1e-4)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            batchnorm_forward(Tensor(np.ones((2, 3, 2, 2))), BnParams.init(2))

    def test_single_element(self):
        with pytest.raises(ShapeError):
            batchnorm_forward(Tensor(np.ones((1, 1, 1, 1))), BnParams.init(1), TRAIN)

    def test_invalid_params(self):
        with pytest.raises(ShapeError):
            bn_with([1.0, 1.0], [0.0])
        with pytest.raises(ValueError):
            bn_with([1.0], [0.0], var=[-1.0])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**20), shift=st.floats(-50, 50), scale=st.floats(1, 20))
    def test_train_output_is_standardized(self, seed, shift, scale):
        # var(xhat) = s2 / (s2 + eps), so tiny batch variances sit outside 1e-4
        x = np.random.default_rng(seed).standard_normal((4, 3, 3, 3)) * scale + shift
        with precision("f64"):
            out = batchnorm_forward(Tensor(x), BnParams.init(3), TRAIN, update_stats=False)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1, atol=1e-4)

    def test_copy_is_independent(self):
        p = BnParams.init(2)
        q = p.copy()
        q.running_mean[0] = 9
        q.gamma.data[0] = 9
        assert p.running_mean[0] == 0 and p.gamma.data[0] == 1


class TestLinear:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32)
        p = LinearParams(Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(linear_forward(Tensor(x), p).data, x)

    def test_zero_weight_gives_bias(self):
        p = LinearParams.zeros(3, 5)
        p.bias.data[:] = [1, 2, 3]
        out = linear_forward(Tensor(np.random.default_rng(0).standard_normal((2, 5))), p)
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_matches_dot_product_loops(self):
        rng = np.random.default_rng(5)
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
        with precision("f64"):
            out = linear_forward(Tensor(x), LinearParams(Tensor(w), Tensor(b)))
        expected = [[sum(x[n, i] * w[o, i] for i in range(4)) + b[o] for o in range(2)] for n in range(3)]
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            linear_forward(Tensor(np.ones((2, 3))), LinearParams.zeros(2, 4))


class TestCrossEntropy:
    def test_uniform(self):
        loss = cross_entropy_loss(Tensor(np.zeros((1, 4))), [2])
        assert loss.item() == pytest.approx(math.log(4), abs=1e-6)

    def test_saturation(self):
        logits = np.zeros((1, 3))
        logits[0, 1] = 20
        assert cross_entropy_loss(Tensor(logits), [1]).item() < 1e-3

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((6, 5)) * 3
        y = rng.integers(0, 5, 6)
        with precision("f64"):
            loss = cross_entropy_loss(Tensor(z), y).item()
        direct = np.mean([-math.log(math.exp(z[n, y[n]]) / sum(math.exp(v) for v in z[n])) for n in range(6)])
        assert loss == pytest.approx(direct, abs=1e-6)

    def test_large_logits_stay_finite(self):
        assert math.isfinite(cross_entropy_loss(Tensor([[1e4, -1e4]]), [1]).item())

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            cross_entropy_loss(Tensor(np.zeros((1, 3))), [3])

    @settings(max_examples=40, deadline=None)
    @given(z=arrays(np.float64, (3, 4), elements=st.floats(-30, 30)), c=st.floats(-100, 100))
    def test_shift_invariance(self, z, c):
        y = [0, 1, 3]
        with precision("f64"):
            a = cross_entropy_loss(Tensor(z), y).item()
            b = cross_entropy_loss(Tensor(z + c), y).item()
        assert a == pytest.approx(b, abs=1e-6)


class TestBinaryCrossEntropy:
    @pytest.mark.parametrize("label", [0, 1])
    def test_zero_logit(self, label):
        loss = binary_cross_entropy_loss(Tensor(np.zeros((2, 3))), np.full((2, 3), label))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((5, 4)) * 4
        y = rng.integers(0, 2, (5, 4))
        with precision("f64"):
            loss = binary_cross_entropy_loss(Tensor(z), y).item()
        s = 1 / (1 + np.exp(-z.astype(np.longdouble)))
        direct = float(np.mean(-(y * np.log(s) + (1 - y) * np.log(1 - s))))
        assert loss == pytest.approx(direct, abs=1e-9)

    def test_extreme_logits_finite(self):
        loss = binary_cross_entropy_loss(Tensor([[1e4, -1e4]]), [[0, 1]])
        assert loss.item() == pytest.approx(1e4)

    def test_non_binary_label(self):
        with pytest.raises(DataError):
            binary_cross_entropy_loss(Tensor(np.zeros((1, 2))), [[0, 2]])

    @settings(max_examples=40, deadline=None)
    @given(z=arrays(np.float64, (2, 3), elements=st.floats(-80, 80)))
    def test_label_flip_symmetry(self, z):
        with precision("f64"):
            a = binary_cross_entropy_loss(Tensor(z), np.ones((2, 3))).item()
            b = binary_cross_entropy_loss(Tensor(-z), np.zeros((2, 3))).item()
        assert a == b


def test_sigmoid_extremes():
    np.testing.assert_array_equal(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])
