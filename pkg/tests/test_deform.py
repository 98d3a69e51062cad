"""Bilinear sampling and the deformable convolution layer."""

import numpy as np
import pytest

from cdgnet.deform import DeformConv2d, bilinear_sample, deform_conv_core
from cdgnet.errors import ShapeError
from cdgnet.tensor import Tensor, conv2d


class TestBilinearSample:
    def test_integer_coordinates_hit_pixel(self):
        rng = np.random.default_rng(0)
        feat = rng.standard_normal((1, 2, 5, 5))
        assert bilinear_sample(feat, 2.0, 3.0, 0, 1) == pytest.approx(feat[0, 1, 2, 3])

    def test_midpoint_interpolates(self):
        feat = np.zeros((1, 1, 2, 2))
        feat[0, 0, 0, 1] = 1.0
        assert bilinear_sample(feat, 0.0, 0.5, 0, 0) == pytest.approx(0.5)

    def test_fully_outside_is_zero(self):
        feat = np.ones((1, 1, 4, 4))
        assert bilinear_sample(feat, -1.5, -1.5, 0, 0) == 0.0

    def test_partial_overlap_drops_outside_neighbors(self):
        feat = np.ones((1, 1, 4, 4))
        # (y, x) = (-0.5, 0): neighbors at y=-1 contribute zero.
        assert bilinear_sample(feat, -0.5, 0.0, 0, 0) == pytest.approx(0.5)


class TestDeformConv:
    def _random_core_inputs(self, rng, n=1, cin=2, cout=3, h=5, w=5):
        x = Tensor(rng.standard_normal((n, cin, h, w)))
        wt = Tensor(rng.standard_normal((cout, cin, 3, 3)))
        b = Tensor(rng.standard_normal(cout))
        return x, wt, b

    def test_zero_offsets_equal_regular_conv(self):
        rng = np.random.default_rng(0)
        x, wt, b = self._random_core_inputs(rng)
        off = Tensor(np.zeros((1, 18, 5, 5)))
        got = deform_conv_core(x, wt, b, off).data
        want = conv2d(x, wt, b, 1, 1).data
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_fresh_layer_equals_regular_conv(self):
        rng = np.random.default_rng(1)
        layer = DeformConv2d(2, 3, rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)))
        got = layer(x).data
        want = conv2d(x, layer.weight, layer.bias, 1, 1).data
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_constant_input_invariant_to_inbounds_offsets(self):
        rng = np.random.default_rng(2)
        x = Tensor(np.full((1, 2, 8, 8), 1.7))
        wt = Tensor(rng.standard_normal((3, 2, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        # Offsets small enough that every sample of interior outputs stays
        # in-bounds; compare interior region only.
        off = Tensor(0.3 * rng.standard_normal((1, 18, 8, 8)))
        got = deform_conv_core(x, wt, b, off).data[:, :, 3:5, 3:5]
        want = conv2d(x, wt, b, 1, 1).data[:, :, 3:5, 3:5]
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_tap_order_row_major(self):
        # A kernel with a single active tap at (ky=-1, kx=0) (tap index 1)
        # plus a +1.0 dy offset on that tap must read the input pixel itself.
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 2] = 4.0
        wt = np.zeros((1, 1, 3, 3))
        wt[0, 0, 0, 1] = 1.0  # tap (-1, 0)
        off = np.zeros((1, 18, 5, 5))
        off[0, 2 * 1] = 1.0   # dy of tap index 1
        out = deform_conv_core(Tensor(x), Tensor(wt), Tensor(np.zeros(1)),
                               Tensor(off)).data
        np.testing.assert_allclose(out[0, 0], x[0, 0], atol=1e-12)

    def test_rejects_non_3x3(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        wt = Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            deform_conv_core(x, wt, Tensor(np.zeros(1)), Tensor(np.zeros((1, 18, 4, 4))))

    def test_rejects_bad_offset_shape(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        wt = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ShapeError):
            deform_conv_core(x, wt, Tensor(np.zeros(1)), Tensor(np.zeros((1, 9, 4, 4))))

    def test_gradients_match_finite_differences(self):
        from cdgnet.gradcheck import check_deform_conv2d
        assert check_deform_conv2d(0) <= 1e-6
