"""Finite-difference verification suite for every differentiable operation.

All checks run in 64-bit with seeded inputs at desk-scale extents and
return the max relative error |analytic - central difference| / max(1, |analytic|).
"""

from __future__ import annotations

import numpy as np

from .blocks import ACDA, RDB, ChannelAttention, ResBlock, SpatialAttention
from .config import Config
from .deform import DeformConv2d
from .model import OFF, CDGNet, LargeDecoder, SmallDecoder
from .supervision import total_loss
from .tensor import (Tensor, activation, concat, conv2d, conv_transpose2d, ewise,
                     global_avg_pool, grad_check, tsum)

_EPS = 1e-5


def _t(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _proj_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Project with fixed random weights so every output element matters."""
    w = Tensor(rng.standard_normal(out.shape))
    return tsum(out * w)


def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    return grad_check(lambda: _proj_sum(conv2d(x, w, b, 2, 1), np.random.default_rng(seed + 1)),
                      [x, w, b], eps=_EPS)


def check_conv_transpose2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 2, 3, 4, 4), _t(rng, 3, 2, 4, 4), _t(rng, 2)
    return grad_check(lambda: _proj_sum(conv_transpose2d(x, w, b, 2, 1),
                                        np.random.default_rng(seed + 1)),
                      [x, w, b], eps=_EPS)


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((2, 3, 4, 4))
    # Keep probes away from the kink by at least 10 * eps.
    data[np.abs(data) < 10 * _EPS] = 0.1
    x = Tensor(data, requires_grad=True)
    return grad_check(lambda: _proj_sum(activation(x, "relu"),
                                        np.random.default_rng(seed + 1)), [x], eps=_EPS)


def check_sigmoid(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4, 4)
    return grad_check(lambda: _proj_sum(activation(x, "sigmoid"),
                                        np.random.default_rng(seed + 1)), [x], eps=_EPS)


def check_global_avg_pool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 4, 5, 5)
    return grad_check(lambda: _proj_sum(global_avg_pool(x),
                                        np.random.default_rng(seed + 1)), [x], eps=_EPS)


def check_ewise(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a, b, c = _t(rng, 2, 3, 4, 4), _t(rng, 1, 3, 1, 1), _t(rng, 2, 3, 4, 4)

    def f():
        pr = np.random.default_rng(seed + 1)
        out = ewise(ewise(a, b, "mul"), c, "sub")
        return _proj_sum(out, pr)

    return grad_check(f, [a, b, c], eps=_EPS)


def check_concat(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 4, 4)
    return grad_check(lambda: _proj_sum(concat([a, b]).sigmoid(),
                                        np.random.default_rng(seed + 1)),
                      [a, b], eps=_EPS)


def _randomize_offsets(layer: DeformConv2d, rng: np.random.Generator) -> None:
    # Non-integer offsets keep probes off the bilinear kinks.
    layer.offset_conv.weight.data = 0.1 * rng.standard_normal(
        layer.offset_conv.weight.shape)
    layer.offset_conv.bias.data = 0.2 * rng.standard_normal(
        layer.offset_conv.bias.shape)


def check_deform_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = DeformConv2d(2, 3, rng, dtype=np.float64)
    _randomize_offsets(layer, rng)
    x = _t(rng, 1, 2, 5, 5)
    params = [x] + layer.parameters()
    return grad_check(lambda: _proj_sum(layer(x), np.random.default_rng(seed + 1)),
                      params, eps=_EPS)


def _module_check(build, seed: int, shape: tuple[int, ...],
                  max_elems: int | None = None) -> float:
    rng = np.random.default_rng(seed)
    mod = build(rng)
    x = _t(rng, *shape)
    params = [x] + mod.parameters()
    return grad_check(lambda: _proj_sum(mod(x), np.random.default_rng(seed + 1)),
                      params, eps=_EPS, max_elems=max_elems,
                      rng=np.random.default_rng(seed + 2))


def check_resblock(seed: int) -> float:
    return _module_check(lambda rng: ResBlock(3, rng, np.float64), seed, (1, 3, 4, 4))


def check_rdb(seed: int) -> float:
    return _module_check(lambda rng: RDB(4, 2, rng, np.float64), seed, (1, 4, 4, 4))


def check_channel_attention(seed: int) -> float:
    return _module_check(lambda rng: ChannelAttention(4, 2, rng, np.float64),
                         seed, (1, 4, 4, 4))


def check_spatial_attention(seed: int) -> float:
    def build(rng):
        mod = SpatialAttention(8, rng, np.float64)
        _randomize_offsets(mod.deform, rng)
        return mod

    return _module_check(build, seed, (1, 8, 4, 4), max_elems=24)


def check_acda(seed: int) -> float:
    def build(rng):
        mod = ACDA(8, 2, rng, np.float64)
        _randomize_offsets(mod.spatial.deform, rng)

        class _Wrap:
            def parameters(self):
                return mod.parameters()

            def __call__(self, x):
                return mod(x)[0]

        return _Wrap()

    return _module_check(build, seed, (1, 8, 4, 4), max_elems=24)


def _decoder_check(cls, seed: int) -> float:
    def build(rng):
        dec = cls(8, 4, rng, np.float64)
        for name, p in dec.named_parameters():
            if name.endswith("offset_conv.weight"):
                p.data = 0.1 * rng.standard_normal(p.shape)
            elif name.endswith("offset_conv.bias"):
                p.data = 0.2 * rng.standard_normal(p.shape)

        class _Wrap:
            def parameters(self):
                return dec.parameters()

            def __call__(self, x):
                feat, img = dec(x)
                return concat([feat, img])

        return _Wrap()

    return _module_check(build, seed, (1, 8, 2, 2), max_elems=8)


def check_large_decoder(seed: int) -> float:
    return _decoder_check(LargeDecoder, seed)


def check_small_decoder(seed: int) -> float:
    return _decoder_check(SmallDecoder, seed)


def check_off(seed: int) -> float:
    rng = np.random.default_rng(seed)
    mod = OFF(4, rng, np.float64)
    a, b = _t(rng, 1, 4, 4, 4), _t(rng, 1, 4, 4, 4)
    params = [a, b] + mod.parameters()
    return grad_check(lambda: _proj_sum(mod(a, b), np.random.default_rng(seed + 1)),
                      params, eps=_EPS, max_elems=16,
                      rng=np.random.default_rng(seed + 2))


def check_total_loss_end_to_end(seed: int) -> float:
    """Full toy network on an 8x8 input, probed at sampled elements of every
    parameter tensor."""
    rng = np.random.default_rng(seed)
    cfg = Config(channels=8, small_channels=4, reduction_ratio=2,
                 batch=1, crop=8)
    model = CDGNet(cfg, rng, dtype=np.float64)
    for name, p in model.named_parameters():
        if name.endswith("offset_conv.weight"):
            p.data = 0.05 * rng.standard_normal(p.shape)
        elif name.endswith("offset_conv.bias"):
            p.data = 0.2 * rng.standard_normal(p.shape)
    x = Tensor(rng.uniform(-0.5, 0.5, (1, 3, 8, 8)), requires_grad=True)
    target = rng.uniform(-0.5, 0.5, (1, 3, 8, 8))
    mask = (rng.random((1, 1, 8, 8)) > 0.5).astype(np.float64)

    def f():
        out = model(x)
        loss, _ = total_loss(out["i_hat"], out["l_img"], out["s_img"],
                             target, mask)
        return loss

    params = [x] + model.parameters()
    return grad_check(f, params, eps=_EPS, max_elems=3,
                      rng=np.random.default_rng(seed + 2))


SUITE = {
    "conv2d": check_conv2d,
    "conv_transpose2d": check_conv_transpose2d,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "global_avg_pool": check_global_avg_pool,
    "ewise": check_ewise,
    "concat": check_concat,
    "deform_conv2d": check_deform_conv2d,
    "resblock": check_resblock,
    "rdb": check_rdb,
    "channel_attention": check_channel_attention,
    "spatial_attention": check_spatial_attention,
    "acda": check_acda,
    "large_decoder": check_large_decoder,
    "small_decoder": check_small_decoder,
    "off": check_off,
    "total_loss_end_to_end": check_total_loss_end_to_end,
}


def run_suite(ops: list[str] | None = None, seed: int = 0) -> dict[str, float]:
    names = ops if ops is not None else list(SUITE)
    results = {}
    for name in names:
        results[name] = SUITE[name](seed)
    return results
