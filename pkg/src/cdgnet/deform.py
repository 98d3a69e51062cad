"""Deformable 3x3 convolution with learned offsets and bilinear sampling.

Offsets come from an internal zero-initialized 3x3 convolution, so a fresh
layer behaves exactly like a regular convolution. Offset channels are laid
out as (dy, dx) pairs per tap, taps in row-major order over the 3x3 grid.
Samples falling outside the image contribute zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .layers import Conv2d
from .module import Module, he_normal
from .tensor import Tensor, _make, note_branch_pattern

_TAPS = [(ky, kx) for ky in (-1, 0, 1) for kx in (-1, 0, 1)]


def bilinear_sample(feat: Tensor, y: float, x: float, n: int, c: int) -> float:
    """Sample one value at real coordinates (y, x); zero outside the image."""
    data = feat.data if isinstance(feat, Tensor) else np.asarray(feat)
    h, w = data.shape[2], data.shape[3]
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    total = 0.0
    for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < h and 0 <= xx < w:
            total += wt * float(data[n, c, yy, xx])
    return total


def _gather(feat: np.ndarray, yc: np.ndarray, xc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gather feat[n,:,yc,xc] with zero outside; returns (values, valid mask)."""
    n, c, h, w = feat.shape
    valid = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
    yi = np.clip(yc, 0, h - 1)
    xi = np.clip(xc, 0, w - 1)
    lin = (np.arange(n)[:, None, None] * h * w + yi * w + xi).ravel()
    flat = feat.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    vals = flat[:, lin].reshape(c, n, h, w).transpose(1, 0, 2, 3)
    vals = vals * valid[:, None, :, :]
    return vals, valid


def _tap_coords(off: np.ndarray, k: int, ky: int, kx: int,
                h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    gy = np.arange(h, dtype=off.dtype)[:, None]
    gx = np.arange(w, dtype=off.dtype)[None, :]
    py = gy + ky + off[:, 2 * k]
    px = gx + kx + off[:, 2 * k + 1]
    return py, px


def deform_conv_core(x: Tensor, w: Tensor, b: Tensor, off: Tensor) -> Tensor:
    """out(p) = sum_k w_k . bilinear(x, p + tap_k + offset_k(p)); stride 1, pad 1."""
    n, cin, h, w_ = x.shape
    cout, wcin, kh, kw = w.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"deformable conv supports 3x3 kernels only, got ({kh},{kw})")
    if wcin != cin:
        raise ShapeError(f"channel axis mismatch: input has {cin}, kernel expects {wcin}")
    if off.shape != (n, 18, h, w_):
        raise ShapeError(f"offset tensor must be (N,18,H,W), got {off.shape}")

    out = np.zeros((n, cout, h, w_), dtype=x.data.dtype)
    for k, (ky, kx) in enumerate(_TAPS):
        py, px = _tap_coords(off.data, k, ky, kx, h, w_)
        samp = _bilinear_forward(x.data, py, px)
        out += np.einsum("nchw,oc->nohw", samp, w.data[:, :, ky + 1, kx + 1])
    out += b.data[None, :, None, None]

    def backward(gout: np.ndarray) -> None:
        if b.grad is not None:
            b.grad += gout.sum(axis=(0, 2, 3))
        for k, (ky, kx) in enumerate(_TAPS):
            py, px = _tap_coords(off.data, k, ky, kx, h, w_)
            y0 = np.floor(py).astype(np.int64)
            x0 = np.floor(px).astype(np.int64)
            fy = py - y0
            fx = px - x0
            v00, m00 = _gather(x.data, y0, x0)
            v01, m01 = _gather(x.data, y0, x0 + 1)
            v10, m10 = _gather(x.data, y0 + 1, x0)
            v11, m11 = _gather(x.data, y0 + 1, x0 + 1)
            fy1 = fy[:, None]
            fx1 = fx[:, None]
            if w.grad is not None:
                samp = ((1 - fy1) * (1 - fx1) * v00 + (1 - fy1) * fx1 * v01
                        + fy1 * (1 - fx1) * v10 + fy1 * fx1 * v11)
                w.grad[:, :, ky + 1, kx + 1] += np.einsum("nohw,nchw->oc", gout, samp)
            gsamp = np.einsum("nohw,oc->nchw", gout, w.data[:, :, ky + 1, kx + 1])
            if x.grad is not None:
                wts = (((1 - fy) * (1 - fx)) * m00, ((1 - fy) * fx) * m01,
                       (fy * (1 - fx)) * m10, (fy * fx) * m11)
                locs = ((y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1))
                for wt, (yc, xc) in zip(wts, locs):
                    yi = np.clip(yc, 0, h - 1)
                    xi = np.clip(xc, 0, w_ - 1)
                    base = (np.arange(n)[:, None, None, None] * cin
                            + np.arange(cin)[None, :, None, None]) * (h * w_)
                    idx = base + (yi * w_ + xi)[:, None]
                    vals = gsamp * wt[:, None]
                    x.grad += np.bincount(
                        idx.ravel(), weights=vals.ravel(),
                        minlength=n * cin * h * w_).reshape(x.shape).astype(x.data.dtype)
            if off.grad is not None:
                dvdy = (-(1 - fx1) * v00 - fx1 * v01 + (1 - fx1) * v10 + fx1 * v11)
                dvdx = (-(1 - fy1) * v00 + (1 - fy1) * v01 - fy1 * v10 + fy1 * v11)
                off.grad[:, 2 * k] += (gsamp * dvdy).sum(axis=1)
                off.grad[:, 2 * k + 1] += (gsamp * dvdx).sum(axis=1)

    return _make(out, (x, w, b, off), backward)


def _bilinear_forward(feat: np.ndarray, py: np.ndarray, px: np.ndarray) -> np.ndarray:
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    note_branch_pattern(y0)
    note_branch_pattern(x0)
    fy = (py - y0)[:, None]
    fx = (px - x0)[:, None]
    v00, _ = _gather(feat, y0, x0)
    v01, _ = _gather(feat, y0, x0 + 1)
    v10, _ = _gather(feat, y0 + 1, x0)
    v11, _ = _gather(feat, y0 + 1, x0 + 1)
    return ((1 - fy) * (1 - fx) * v00 + (1 - fy) * fx * v01
            + fy * (1 - fx) * v10 + fy * fx * v11)


class DeformConv2d(Module):
    """3x3 deformable convolution layer; fresh layers equal a regular conv."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.weight = Tensor(he_normal(rng, (cout, cin, 3, 3), cin * 9, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.offset_conv = Conv2d(cin, 18, 3, stride=1, pad=1, dtype=dtype,
                                  zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        off = self.offset_conv(x)
        return deform_conv_core(x, self.weight, self.bias, off)
