"""ResBlock, residual dense block, and the attention assembly."""

import numpy as np
import pytest

from cdgnet.blocks import ACDA, RDB, ChannelAttention, ResBlock, SpatialAttention
from cdgnet.errors import ConfigError
from cdgnet.tensor import Tensor


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data = np.zeros_like(p.data)


class TestResBlock:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(0)
        block = ResBlock(3, rng, np.float64)
        _zero_params(block)
        x = Tensor(rng.standard_normal((1, 3, 5, 5)))
        np.testing.assert_array_equal(block(x).data, x.data)

    def test_output_minus_input_is_conv_branch(self):
        rng = np.random.default_rng(1)
        block = ResBlock(3, rng, np.float64)
        x = Tensor(rng.standard_normal((1, 3, 5, 5)))
        branch = block.conv2(block.conv1(x).relu())
        np.testing.assert_allclose(block(x).data - x.data, branch.data, atol=1e-12)


class TestRDB:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(0)
        block = RDB(4, 2, rng, np.float64)
        _zero_params(block)
        x = Tensor(rng.standard_normal((1, 4, 5, 5)))
        np.testing.assert_array_equal(block(x).data, x.data)

    def test_dense_connection_widths(self):
        block = RDB(16, 8, np.random.default_rng(0), np.float64)
        in_widths = [c.weight.shape[1] for c in block.convs]
        assert in_widths == [16, 24, 32, 40]
        assert block.fusion.weight.shape[1] == 48

    def test_preserves_channels(self):
        rng = np.random.default_rng(1)
        block = RDB(6, 3, rng, np.float64)
        x = Tensor(rng.standard_normal((2, 6, 4, 4)))
        assert block(x).shape == x.shape


class TestChannelAttention:
    def test_zeroed_params_give_half(self):
        rng = np.random.default_rng(0)
        att = ChannelAttention(4, 2, rng, np.float64)
        _zero_params(att)
        out = att(Tensor(rng.standard_normal((2, 4, 5, 5))))
        assert out.shape == (2, 4, 1, 1)
        np.testing.assert_allclose(out.data, 0.5)

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(1)
        att = ChannelAttention(4, 2, rng, np.float64)
        x = rng.standard_normal((1, 4, 4, 4))
        perm = rng.permutation(16)
        xp = x.reshape(1, 4, 16)[:, :, perm].reshape(1, 4, 4, 4)
        np.testing.assert_allclose(att(Tensor(x)).data, att(Tensor(xp)).data,
                                   atol=1e-12)

    def test_indivisible_reduction_rejected(self):
        with pytest.raises(ConfigError):
            ChannelAttention(6, 4, np.random.default_rng(0), np.float64)

    def test_range(self):
        rng = np.random.default_rng(2)
        att = ChannelAttention(4, 2, rng, np.float64)
        out = att(Tensor(rng.standard_normal((1, 4, 3, 3)))).data
        assert np.all(out > 0) and np.all(out < 1)


class TestSpatialAttention:
    def test_zeroed_final_conv_gives_half(self):
        rng = np.random.default_rng(0)
        att = SpatialAttention(8, rng, np.float64)
        att.project.weight.data[:] = 0
        att.project.bias.data[:] = 0
        out = att(Tensor(rng.standard_normal((1, 8, 4, 4))))
        np.testing.assert_allclose(out.data, 0.5)

    def test_single_channel_map_shape(self):
        rng = np.random.default_rng(1)
        att = SpatialAttention(16, rng, np.float64)
        out = att(Tensor(rng.standard_normal((2, 16, 6, 6))))
        assert out.shape == (2, 1, 6, 6)
        assert np.all(out.data > 0) and np.all(out.data < 1)


class TestACDA:
    def test_saturated_maps_double_features(self):
        rng = np.random.default_rng(0)
        acda = ACDA(4, 2, rng, np.float64)
        # Force both sigmoid inputs to a large constant so the maps are ~1.
        _zero_params(acda)
        acda.channel.excite.bias.data[:] = 50.0
        acda.spatial.project.bias.data[:] = 50.0
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        out, _, _ = acda(x)
        np.testing.assert_allclose(out.data, 2.0 * x.data, atol=1e-6)

    def test_zeroed_params_give_quarter_gain(self):
        rng = np.random.default_rng(1)
        acda = ACDA(4, 2, rng, np.float64)
        _zero_params(acda)
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        out, m_c, m_s = acda(x)
        np.testing.assert_allclose(m_c.data, 0.5)
        np.testing.assert_allclose(m_s.data, 0.5)
        np.testing.assert_allclose(out.data, 1.25 * x.data, atol=1e-12)

    def test_attended_features_bounded(self):
        rng = np.random.default_rng(2)
        acda = ACDA(8, 2, rng, np.float64)
        x = Tensor(rng.standard_normal((1, 8, 5, 5)))
        out, m_c, m_s = acda(x)
        assert np.all(np.abs(out.data) <= 2 * np.abs(x.data) + 1e-12)
        assert np.all((m_c.data > 0) & (m_c.data < 1))
        assert np.all((m_s.data > 0) & (m_s.data < 1))
        assert m_c.shape == (1, 8, 1, 1)
        assert m_s.shape == (1, 1, 5, 5)
