"""Full network assembly: shared encoder, two attention-gated branches with
deformable-convolution decoders, and orientation-based fusion of the two
reconstructions into the final image."""

from __future__ import annotations

import numpy as np

from .blocks import ACDA, RDB, ResBlock
from .config import Config
from .deform import DeformConv2d
from .errors import InputError
from .layers import Conv2d, ConvTranspose2d
from .module import Module
from .tensor import Tensor, concat


def _growth(width: int) -> int:
    return max(1, width // 2)


class Encoder(Module):
    """3 convolutions (last two stride 2) interleaved with 6 residual dense
    blocks; maps (N,3,H,W) to (N,C,H/4,W/4)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        c4, c2, c = channels // 4, channels // 2, channels
        self.conv1 = Conv2d(3, c4, 3, stride=1, pad=1, rng=rng, dtype=dtype)
        self.rdbs1 = [RDB(c4, _growth(c4), rng, dtype) for _ in range(2)]
        self.conv2 = Conv2d(c4, c2, 3, stride=2, pad=((1, 0), (1, 0)), rng=rng, dtype=dtype)
        self.rdbs2 = [RDB(c2, _growth(c2), rng, dtype) for _ in range(2)]
        self.conv3 = Conv2d(c2, c, 3, stride=2, pad=((1, 0), (1, 0)), rng=rng, dtype=dtype)
        self.rdbs3 = [RDB(c, _growth(c), rng, dtype) for _ in range(2)]

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[2], x.shape[3]
        if h % 4 or w % 4:
            raise InputError(
                f"input extents ({h},{w}) must be divisible by 4; pad the image first")
        y = self.conv1(x).relu()
        for rdb in self.rdbs1:
            y = rdb(y)
        y = self.conv2(y).relu()
        for rdb in self.rdbs2:
            y = rdb(y)
        y = self.conv3(y).relu()
        for rdb in self.rdbs3:
            y = rdb(y)
        return y


class _DecoderBase(Module):
    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def deform_layer_count(self) -> int:
        return sum(1 for name, _ in self.named_parameters()
                   if name.endswith("offset_conv.weight"))


class LargeDecoder(_DecoderBase):
    """Heavy-blur branch: per level 3 deformable convolutions, upsampling
    back to full resolution, 3x3 head to the small feature width, and a 1x1
    projection to an RGB image for supervision."""

    def __init__(self, channels: int, small_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        widths = [channels, channels // 2, small_channels]
        self.levels = []
        self.ups = []
        for i, width in enumerate(widths):
            self.levels.append([DeformConv2d(width, width, rng, dtype) for _ in range(3)])
            if i < 2:
                self.ups.append(ConvTranspose2d(width, widths[i + 1], rng=rng, dtype=dtype))
        self.head = Conv2d(small_channels, small_channels, 3, pad=1, rng=rng, dtype=dtype)
        # Small head init keeps the predicted image near zero at the start,
        # so early training refines content instead of shrinking magnitude.
        self.project = Conv2d(small_channels, 3, 1, rng=rng, dtype=dtype,
                              init_scale=0.1)

    def named_parameters(self, prefix: str = ""):
        for i, level in enumerate(self.levels):
            for j, layer in enumerate(level):
                yield from layer.named_parameters(f"{prefix}levels.{i}.{j}.")
        for i, up in enumerate(self.ups):
            yield from up.named_parameters(f"{prefix}ups.{i}.")
        yield from self.head.named_parameters(f"{prefix}head.")
        yield from self.project.named_parameters(f"{prefix}project.")

    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor]:
        y = f
        for i, level in enumerate(self.levels):
            for layer in level:
                y = layer(y).relu()
            if i < 2:
                y = self.ups[i](y).relu()
        feat = self.head(y)
        return feat, self.project(feat)


class SmallDecoder(_DecoderBase):
    """Light-blur branch: per level 2 ResBlocks, one deformable convolution
    followed by a 1x1 reduction, then upsampling; same heads as the large
    branch but fewer deformable layers."""

    def __init__(self, channels: int, small_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        widths = [channels, channels // 2, small_channels]
        self.res = []
        self.deforms = []
        self.reduces = []
        self.ups = []
        for i, width in enumerate(widths):
            self.res.append([ResBlock(width, rng, dtype) for _ in range(2)])
            self.deforms.append(DeformConv2d(width, width, rng, dtype))
            self.reduces.append(Conv2d(width, width, 1, rng=rng, dtype=dtype))
            if i < 2:
                self.ups.append(ConvTranspose2d(width, widths[i + 1], rng=rng, dtype=dtype))
        self.head = Conv2d(small_channels, small_channels, 3, pad=1, rng=rng, dtype=dtype)
        self.project = Conv2d(small_channels, 3, 1, rng=rng, dtype=dtype,
                              init_scale=0.1)

    def named_parameters(self, prefix: str = ""):
        for i in range(len(self.res)):
            for j, block in enumerate(self.res[i]):
                yield from block.named_parameters(f"{prefix}res.{i}.{j}.")
            yield from self.deforms[i].named_parameters(f"{prefix}deforms.{i}.")
            yield from self.reduces[i].named_parameters(f"{prefix}reduces.{i}.")
        for i, up in enumerate(self.ups):
            yield from up.named_parameters(f"{prefix}ups.{i}.")
        yield from self.head.named_parameters(f"{prefix}head.")
        yield from self.project.named_parameters(f"{prefix}project.")

    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor]:
        y = f
        for i in range(len(self.res)):
            for block in self.res[i]:
                y = block(y)
            y = self.deforms[i](y).relu()
            y = self.reduces[i](y).relu()
            if i < 2:
                y = self.ups[i](y).relu()
        feat = self.head(y)
        return feat, self.project(feat)


_DIAG_MASK = np.eye(3)
_ADIAG_MASK = np.fliplr(np.eye(3)).copy()


class _OrientationBank(Module):
    """Four orientation-selective filters over one branch's features:
    1x3 horizontal, 3x1 vertical, and 3x3 kernels masked to the main and
    anti diagonal (3 trainable taps each, the rest pinned at 0)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.horizontal = Conv2d(channels, channels, (1, 3), pad=(0, 1), rng=rng, dtype=dtype)
        self.vertical = Conv2d(channels, channels, (3, 1), pad=(1, 0), rng=rng, dtype=dtype)
        self.diagonal = Conv2d(channels, channels, 3, pad=1, rng=rng, dtype=dtype,
                               tap_mask=_DIAG_MASK)
        self.anti_diagonal = Conv2d(channels, channels, 3, pad=1, rng=rng, dtype=dtype,
                                    tap_mask=_ADIAG_MASK)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.horizontal(x), self.vertical(x),
                self.diagonal(x), self.anti_diagonal(x))


class OFF(Module):
    """Orientation-based fusion of the two branch features into an image:
    per-orientation concat + 3x3 conv, then a final 3x3 conv over the four
    fused orientation maps."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.large_bank = _OrientationBank(channels, rng, dtype)
        self.small_bank = _OrientationBank(channels, rng, dtype)
        self.fuse = [Conv2d(2 * channels, channels, 3, pad=1, rng=rng, dtype=dtype)
                     for _ in range(4)]
        self.final = Conv2d(4 * channels, 3, 3, pad=1, rng=rng, dtype=dtype,
                            init_scale=0.1)

    def __call__(self, l_out: Tensor, s_out: Tensor) -> Tensor:
        l_feats = self.large_bank(l_out)
        s_feats = self.small_bank(s_out)
        fused = [conv(concat([lf, sf])).relu()
                 for conv, lf, sf in zip(self.fuse, l_feats, s_feats)]
        return self.final(concat(fused))


class CDGNet(Module):
    """End-to-end deblurring network (Fig. 2 wiring): one shared encoder,
    two attention modules with separate parameters, two decoders, fusion."""

    def __init__(self, cfg: Config, rng: np.random.Generator, dtype=np.float32):
        self.encoder = Encoder(cfg.channels, rng, dtype)
        self.acda_large = ACDA(cfg.channels, cfg.reduction_ratio, rng, dtype)
        self.acda_small = ACDA(cfg.channels, cfg.reduction_ratio, rng, dtype)
        self.decoder_large = LargeDecoder(cfg.channels, cfg.small_channels, rng, dtype)
        self.decoder_small = SmallDecoder(cfg.channels, cfg.small_channels, rng, dtype)
        self.off = OFF(cfg.small_channels, rng, dtype)

    def __call__(self, x: Tensor) -> dict[str, Tensor]:
        f_e = self.encoder(x)
        f_att_l, m_c_l, m_s_l = self.acda_large(f_e)
        f_att_s, m_c_s, m_s_s = self.acda_small(f_e)
        l_feat, l_img = self.decoder_large(f_att_l)
        s_feat, s_img = self.decoder_small(f_att_s)
        i_hat = self.off(l_feat, s_feat)
        return {
            "i_hat": i_hat,
            "l_feat": l_feat, "l_img": l_img,
            "s_feat": s_feat, "s_img": s_img,
            "m_c_large": m_c_l, "m_s_large": m_s_l,
            "m_c_small": m_c_s, "m_s_small": m_s_s,
        }


def trainable_elements(param: Tensor) -> int:
    if param.tap_mask is not None:
        return int(param.tap_mask.sum())
    return param.data.size


def param_count(model: Module) -> int:
    """Total trainable parameter footprint in bytes (32-bit storage);
    masked orientation taps do not count."""
    return sum(trainable_elements(p) * 4 for _, p in model.named_parameters())


def param_ledger(model: Module) -> list[tuple[str, tuple[int, ...], int]]:
    """Per-parameter (name, shape, trainable element count) listing."""
    return [(name, p.shape, trainable_elements(p))
            for name, p in model.named_parameters()]
