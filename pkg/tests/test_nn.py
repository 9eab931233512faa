import numpy as np
import pytest
import torch

from oracles import bilinear_point, central_difference, conv2d_direct, relative_error
from sarpn.errors import ConfigurationError
from sarpn.nn import ConvSpec, avg_pool2, bilinear_resize, concat_channels, conv2d, global_avg_pool

D = torch.float64


def t(a):
    return torch.as_tensor(np.asarray(a), dtype=D)


class TestConv2d:
    def test_identity_1x1(self, rng):
        x = t(rng.normal(size=(3, 5, 4)))
        w = torch.eye(3, dtype=D)[:, :, None, None]
        assert torch.equal(conv2d(x, w, torch.zeros(3, dtype=D)), x)

    def test_average_preserves_constant(self):
        x = torch.full((1, 5, 5), 2.5, dtype=D)
        w = torch.full((1, 1, 3, 3), 1.0 / 9.0, dtype=D)
        out = conv2d(x, w)
        assert out.shape == (1, 3, 3)
        np.testing.assert_allclose(out.numpy(), 2.5, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (2, 0)])
    def test_matches_direct_summation(self, rng, stride, padding):
        x = rng.normal(size=(1, 4, 4)) if stride == 1 else rng.normal(size=(2, 6, 5))
        w = rng.normal(size=(3, x.shape[0], 3, 3))
        b = rng.normal(size=3)
        out = conv2d(t(x), t(w), t(b), stride=stride, padding=padding).numpy()
        np.testing.assert_allclose(out, conv2d_direct(x, w, b, stride, padding), atol=1e-9, rtol=0)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            conv2d(torch.zeros(2, 4, 4), torch.zeros(1, 3, 3, 3))

    def test_nonpositive_output(self):
        with pytest.raises(ConfigurationError):
            conv2d(torch.zeros(1, 2, 2), torch.zeros(1, 1, 3, 3))

    def test_spec_rejects_even_kernel(self):
        with pytest.raises(ConfigurationError):
            ConvSpec(1, 1, kernel_size=2)

    def test_linear_in_input_and_weights(self, rng):
        x, y = t(rng.normal(size=(2, 5, 5))), t(rng.normal(size=(2, 5, 5)))
        w, v = t(rng.normal(size=(3, 2, 3, 3))), t(rng.normal(size=(3, 2, 3, 3)))
        a, b = 1.7, -0.3
        lhs = conv2d(a * x + b * y, w, padding=1)
        rhs = a * conv2d(x, w, padding=1) + b * conv2d(y, w, padding=1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        lhs = conv2d(x, a * w + b * v, padding=1)
        rhs = a * conv2d(x, w, padding=1) + b * conv2d(x, v, padding=1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestBilinearResize:
    def test_identity(self, rng):
        x = t(rng.normal(size=(2, 3, 5)))
        assert torch.equal(bilinear_resize(x, 3, 5), x)

    def test_corner_preservation(self):
        x = t([[[0.0, 1.0], [2.0, 3.0]]])
        out = bilinear_resize(x, 4, 4)[0]
        assert (out[0, 0], out[0, 3], out[3, 0], out[3, 3]) == (0.0, 1.0, 2.0, 3.0)

    def test_pointwise_formula(self, rng):
        x = rng.normal(size=(1, 3, 5))
        np.testing.assert_allclose(bilinear_resize(t(x), 7, 11).numpy(), bilinear_point(x, 7, 11), atol=1e-9)

    def test_degenerate_single_output_samples_origin(self, rng):
        x = rng.normal(size=(2, 4, 6))
        out = bilinear_resize(t(x), 1, 1).numpy()
        np.testing.assert_allclose(out[:, 0, 0], x[:, 0, 0], atol=1e-12)

    def test_downsample_matches_formula(self, rng):
        x = rng.normal(size=(2, 8, 8))
        np.testing.assert_allclose(bilinear_resize(t(x), 2, 3).numpy(), bilinear_point(x, 2, 3), atol=1e-9)

    def test_linear(self, rng):
        x, y = t(rng.normal(size=(2, 4, 4))), t(rng.normal(size=(2, 4, 4)))
        lhs = bilinear_resize(0.4 * x - 2.0 * y, 9, 6)
        rhs = 0.4 * bilinear_resize(x, 9, 6) - 2.0 * bilinear_resize(y, 9, 6)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    @pytest.mark.parametrize("size", [(0, 3), (3, -1)])
    def test_rejects_nonpositive(self, size):
        with pytest.raises(ConfigurationError):
            bilinear_resize(torch.zeros(1, 2, 2), *size)


class TestPoolingAndConcat:
    def test_gap_constant(self):
        np.testing.assert_array_equal(global_avg_pool(torch.full((3, 4, 4), 0.7, dtype=D)).numpy(), [0.7] * 3)

    def test_gap_mean(self):
        assert global_avg_pool(t([[[1.0, 2.0], [3.0, 4.0]]])).tolist() == [2.5]

    def test_gap_sum_oracle(self, rng):
        x = rng.normal(size=(4, 6, 6))
        np.testing.assert_allclose(global_avg_pool(t(x)).numpy(), x.sum(axis=(1, 2)) / 36, atol=1e-12)

    def test_concat_unary(self, rng):
        x = t(rng.normal(size=(2, 3, 3)))
        assert torch.equal(concat_channels([x]), x)

    def test_concat_order_and_slicing(self, rng):
        maps = [t(rng.normal(size=(c, 2, 2))) for c in (3, 5, 8)]
        out = concat_channels(maps)
        assert out.shape[0] == 16
        assert torch.equal(out[:3], maps[0]) and torch.equal(out[3:8], maps[1]) and torch.equal(out[8:], maps[2])

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ConfigurationError):
            concat_channels([torch.zeros(1, 2, 2), torch.zeros(1, 2, 3)])

    def test_avg_pool2_odd(self):
        with pytest.raises(ConfigurationError):
            avg_pool2(torch.zeros(1, 3, 4))


def _gradcheck(f, params, rng, n=12):
    """Autograd vs central differences on random entries of each parameter."""
    out = f()
    grads = torch.autograd.grad(out, params)
    for p, g in zip(params, grads):
        flat = p.detach().view(-1)
        for k in rng.choice(flat.numel(), size=min(n, flat.numel()), replace=False):
            idx = np.unravel_index(int(k), tuple(p.shape))
            num = central_difference(f, p.data, idx)
            assert relative_error(float(g[idx]), num) < 1e-4


class TestDifferentiation:
    def test_conv2d(self, rng):
        x = t(rng.normal(size=(2, 5, 5))).requires_grad_()
        w = t(rng.normal(size=(3, 2, 3, 3))).requires_grad_()
        b = t(rng.normal(size=3)).requires_grad_()
        proj = t(rng.normal(size=(3, 3, 3)))
        _gradcheck(lambda: (conv2d(x, w, b, stride=2, padding=1) * proj).sum(), [x, w, b], rng)

    def test_bilinear(self, rng):
        x = t(rng.normal(size=(2, 3, 4))).requires_grad_()
        proj = t(rng.normal(size=(2, 7, 5)))
        _gradcheck(lambda: (bilinear_resize(x, 7, 5) * proj).sum(), [x], rng)

    def test_gap(self, rng):
        x = t(rng.normal(size=(3, 4, 4))).requires_grad_()
        proj = t(rng.normal(size=3))
        _gradcheck(lambda: (global_avg_pool(x) * proj).sum(), [x], rng)

    def test_concat(self, rng):
        a = t(rng.normal(size=(2, 3, 3))).requires_grad_()
        b = t(rng.normal(size=(1, 3, 3))).requires_grad_()
        proj = t(rng.normal(size=(3, 3, 3)))
        _gradcheck(lambda: (concat_channels([a, b]) ** 2 * proj).sum(), [a, b], rng)
