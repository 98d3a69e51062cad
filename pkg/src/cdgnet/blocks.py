"""Reusable network blocks: ResBlock, residual dense block, and the
channel/spatial attention assembly that splits features by blur degree."""

from __future__ import annotations

import numpy as np

from .deform import DeformConv2d
from .errors import ConfigError
from .layers import Conv2d
from .module import Module
from .tensor import Tensor, concat, global_avg_pool


class ResBlock(Module):
    """x + conv(relu(conv(x))), channels preserved."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, 3, pad=1, rng=rng, dtype=dtype)
        # Residual branches start small so stacked blocks keep feature
        # magnitudes near the input scale.
        self.conv2 = Conv2d(channels, channels, 3, pad=1, rng=rng, dtype=dtype,
                            init_scale=0.1)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.conv1(x).relu())


class RDB(Module):
    """Residual dense block: 4 densely connected 3x3 convs (3 ReLUs),
    1x1 local fusion back to the block width, plus a residual skip."""

    def __init__(self, channels: int, growth: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.convs = [
            Conv2d(channels + i * growth, growth, 3, pad=1, rng=rng, dtype=dtype)
            for i in range(4)
        ]
        self.fusion = Conv2d(channels + 4 * growth, channels, 1, rng=rng,
                             dtype=dtype, init_scale=0.1)

    def __call__(self, x: Tensor) -> Tensor:
        feats = x
        for i, conv in enumerate(self.convs):
            y = conv(feats)
            if i < 3:
                y = y.relu()
            feats = concat([feats, y])
        return x + self.fusion(feats)


class ChannelAttention(Module):
    """Global-average-pool squeeze/excite map in (0,1), shape (N,C,1,1)."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator,
                 dtype=np.float32):
        if channels % reduction:
            raise ConfigError(
                f"channel count {channels} not divisible by reduction ratio {reduction}")
        mid = channels // reduction
        self.squeeze = Conv2d(channels, mid, 1, rng=rng, dtype=dtype)
        self.excite = Conv2d(mid, channels, 1, rng=rng, dtype=dtype)

    def __call__(self, f: Tensor) -> Tensor:
        pooled = global_avg_pool(f)
        return self.excite(self.squeeze(pooled).relu()).sigmoid()


class SpatialAttention(Module):
    """Single-channel map in (0,1): 3x3 conv to C/4, 2 ResBlocks, one
    deformable conv, and a final 3x3 conv down to one channel."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        mid = max(1, channels // 4)
        self.reduce = Conv2d(channels, mid, 3, pad=1, rng=rng, dtype=dtype)
        self.res1 = ResBlock(mid, rng, dtype)
        self.res2 = ResBlock(mid, rng, dtype)
        self.deform = DeformConv2d(mid, mid, rng, dtype)
        self.project = Conv2d(mid, 1, 3, pad=1, rng=rng, dtype=dtype)

    def __call__(self, f_scaled: Tensor) -> Tensor:
        y = self.reduce(f_scaled).relu()
        y = self.res2(self.res1(y))
        y = self.deform(y).relu()
        return self.project(y).sigmoid()


class ACDA(Module):
    """Attention assembly: F ⊙ M_c ⊙ M_s + F with broadcast over the
    singleton axes of the two maps. The two network instances (large and
    small branch) share this structure but never parameters."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.channel = ChannelAttention(channels, reduction, rng, dtype)
        self.spatial = SpatialAttention(channels, rng, dtype)

    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (attended features, channel map, spatial map)."""
        m_c = self.channel(f)
        m_s = self.spatial(f * m_c)
        return f * m_c * m_s + f, m_c, m_s
