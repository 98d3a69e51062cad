"""Parameterized convolution layers (regular and transposed)."""

from __future__ import annotations

import numpy as np

from .module import Module, he_normal
from .tensor import Tensor, conv2d, conv_transpose2d


class Conv2d(Module):
    """3x3-style convolution layer with optional fixed tap mask.

    ``tap_mask`` is a binary (kh,kw) array; masked-out taps are initialized
    to zero, receive zero gradient (the mask multiplies the weight in the
    forward pass), and the optimizer re-zeros them after every update.
    """

    def __init__(self, cin: int, cout: int, kernel, stride: int = 1, pad=0,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 zero_init: bool = False, tap_mask: np.ndarray | None = None,
                 init_scale: float = 1.0):
        kh, kw = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        self.stride = stride
        self.pad = pad
        if zero_init:
            wdata = np.zeros((cout, cin, kh, kw), dtype=dtype)
        else:
            wdata = he_normal(rng, (cout, cin, kh, kw), cin * kh * kw, dtype)
            if init_scale != 1.0:
                wdata = (wdata * init_scale).astype(dtype)
        if tap_mask is not None:
            wdata = wdata * tap_mask.astype(dtype)
        self.weight = Tensor(wdata, requires_grad=True)
        if tap_mask is not None:
            self.weight.tap_mask = np.broadcast_to(
                tap_mask.astype(dtype), wdata.shape).copy()
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        w = self.weight
        if w.tap_mask is not None:
            w = w * Tensor(w.tap_mask)
        return conv2d(x, w, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    """Stride-2 learned upsampling (4x4 kernel, pad 1 doubles the extent)."""

    def __init__(self, cin: int, cout: int, kernel: int = 4, stride: int = 2,
                 pad: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.stride = stride
        self.pad = pad
        self.weight = Tensor(
            he_normal(rng, (cin, cout, kernel, kernel), cin * kernel * kernel, dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)
