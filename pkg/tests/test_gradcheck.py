import numpy as np
import pytest

from fcxs import ops
from fcxs import tensor as T
from fcxs.errors import ConfigError
from fcxs.gradcheck import gradcheck_network, gradient_check
from fcxs.rng import Rng
from fcxs.tensor import Tensor


def param(rng, shape):
    return Tensor(rng.normal(shape, dtype=np.float64), requires_grad=True)


class TestGradientCheck:
    def test_linear_graph_nearly_exact(self):
        rng = Rng(0)
        w = param(rng.child(0), (4, 4))
        x = rng.child(1).normal((4, 4), dtype=np.float64)

        def loss():
            return T.tsum(T.mul(w, Tensor(x)))

        report = gradient_check(loss, [("w", w)], tolerance=1e-9)
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_three_layer_toy_net_passes(self):
        rng = Rng(1)
        w1 = param(rng.child(0), (4, 2, 3, 3))
        b1 = param(rng.child(1), (4,))
        w2 = param(rng.child(2), (4, 4, 3, 3))
        b2 = param(rng.child(3), (4,))
        w3 = param(rng.child(4), (2, 4, 1, 1))
        b3 = param(rng.child(5), (2,))
        x = rng.child(6).normal((1, 2, 6, 6), dtype=np.float64)
        chi = (np.random.default_rng(2).uniform(size=(1, 2, 6, 6)) < 0.5).astype(np.float64)

        def loss():
            h = ops.elu(ops.conv2d(Tensor(x), w1, b1))
            h = ops.elu(ops.conv2d(h, w2, b2, stride=2))
            h = ops.sigmoid(ops.conv2d(h, w3, b3))
            from fcxs.losses import LossConfig, segmentation_loss

            return segmentation_loss(h, chi[:, :, ::2, ::2], LossConfig("dice"))

        params = [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2), ("w3", w3), ("b3", b3)]
        report = gradient_check(loss, params, tolerance=1e-4, rng=Rng(3))
        assert report.passed, report.summary()

    def test_corrupted_gradient_fails(self):
        rng = Rng(4)
        w = param(rng.child(0), (3, 3))

        def loss():
            return T.tsum(T.mul(w, w))

        report = gradient_check(loss, [("w", w)], tolerance=1e-6, corrupt=True)
        assert not report.passed
        assert "OFFENDER" in report.summary()

    def test_float32_rejected(self):
        w = Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)
        with pytest.raises(ConfigError):
            gradient_check(lambda: T.tsum(w), [("w", w)])

    def test_report_groups_by_kind(self):
        rng = Rng(5)
        w = param(rng.child(0), (2, 2))
        b = param(rng.child(1), (2,))

        def loss():
            return T.add(T.tsum(T.mul(w, w)), T.tsum(b))

        report = gradient_check(
            loss, [("layer.weight", w), ("layer.bias", b)], kinds={"layer.weight": "conv", "layer.bias": "conv"}
        )
        assert set(report.max_error_by_kind()) == {"conv"}


class TestEveryOpPassesGradcheck:
    """Each differentiable op at tolerance 1e-4, float64, inputs <= (2,3,8,8)."""

    def check(self, build_loss, params, seed=0):
        report = gradient_check(build_loss, params, tolerance=1e-4, rng=Rng(seed))
        assert report.passed, report.summary()

    def test_conv2d(self):
        rng = Rng(10)
        x = param(rng.child(0), (2, 3, 8, 8))
        w = param(rng.child(1), (4, 3, 3, 3))
        b = param(rng.child(2), (4,))
        self.check(lambda: T.tsum(ops.conv2d(x, w, b, stride=2)), [("x", x), ("w", w), ("b", b)])

    def test_transposed_conv2d(self):
        rng = Rng(11)
        x = param(rng.child(0), (2, 3, 4, 4))
        w = param(rng.child(1), (3, 2, 2, 2))
        b = param(rng.child(2), (2,))
        self.check(
            lambda: T.tsum(ops.transposed_conv2d(x, w, b)), [("x", x), ("w", w), ("b", b)]
        )

    def test_maxpool2d(self):
        # distinct values keep finite differences away from argmax ties
        data = Rng(12).permutation(2 * 3 * 8 * 8).astype(np.float64).reshape(2, 3, 8, 8)
        x = Tensor(data, requires_grad=True)
        for stride in (1, 2):
            self.check(lambda: T.tsum(ops.maxpool2d(x, stride=stride)), [("x", x)])

    @pytest.mark.parametrize("kind", ["elu", "relu", "sigmoid"])
    def test_activations(self, kind):
        data = Rng(13).normal((2, 3, 8, 8), dtype=np.float64)
        data[np.abs(data) < 0.05] = 0.3  # keep clear of the kink at 0
        x = Tensor(data, requires_grad=True)
        self.check(lambda: T.tsum(ops.sigmoid(ops.activation(kind, x))), [("x", x)])

    def test_softmax_channels(self):
        rng = Rng(14)
        x = param(rng.child(0), (2, 3, 8, 8))
        # dense weights: a sparse selector leaves exact-zero gradients whose
        # finite differences are pure float noise
        sel = np.random.default_rng(1).uniform(0.1, 1.0, size=(2, 3, 8, 8))
        self.check(
            lambda: T.tsum(T.mul(ops.softmax_channels(x), Tensor(sel))), [("x", x)]
        )

    def test_gaussian_dropout_frozen_noise(self):
        rng = Rng(15)
        x = param(rng.child(0), (2, 3, 8, 8))
        # freeze the noise by reseeding identically on every rebuild
        self.check(
            lambda: T.tsum(ops.sigmoid(ops.gaussian_dropout(x, 0.3, "train", Rng(99)))),
            [("x", x)],
        )

    def test_concat_channels(self):
        rng = Rng(16)
        a = param(rng.child(0), (2, 2, 8, 8))
        b = param(rng.child(1), (2, 1, 8, 8))
        sel = np.random.default_rng(2).uniform(size=(2, 3, 8, 8))
        self.check(
            lambda: T.tsum(T.mul(ops.concat_channels(a, b), Tensor(sel))),
            [("a", a), ("b", b)],
        )

    def test_sum_per_channel(self):
        rng = Rng(17)
        x = param(rng.child(0), (2, 3, 8, 8))
        w = Tensor(np.array([1.0, -2.0, 0.5]))
        self.check(lambda: T.tsum(T.mul(ops.sum_per_channel(x), w)), [("x", x)])


class TestNetworkGradcheck:
    @pytest.mark.parametrize("arch", ["unet_original", "invertednet"])
    def test_architectures_pass_dice(self, arch):
        report = gradcheck_network(arch, "dice", seed=0, samples_per_param=4)
        assert report.passed, report.summary()

    def test_cross_entropy_head(self):
        report = gradcheck_network("all_dropout", "cross_entropy", seed=0, samples_per_param=4)
        assert report.passed, report.summary()

    def test_negative_control(self):
        report = gradcheck_network("unet_original", "dice", seed=0, samples_per_param=2, corrupt=True)
        assert not report.passed
