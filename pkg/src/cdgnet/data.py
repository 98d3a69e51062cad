"""Image IO, normalization, crop sampling, synthetic non-uniform blur,
blur diagnostics (gradient histogram / Fourier profile), and PSNR/SSIM."""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve, gaussian_filter

from .errors import InputError

# -- IO and range handling ---------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB PNG as (3,H,W) float64 in [0,1]."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            raise InputError(f"{path}: 16-bit images are unsupported; use 8-bit RGB")
        if im.mode == "L":
            im = im.convert("RGB")
        if im.mode != "RGB":
            raise InputError(f"{path}: unsupported mode {im.mode}; use 8-bit RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(img01: np.ndarray, path: str | Path) -> None:
    """Clamp to [0,1], round half up to 8-bit, write a PNG."""
    arr = np.clip(img01, 0.0, 1.0)
    arr8 = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    if arr8.ndim == 3:
        Image.fromarray(arr8.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        Image.fromarray(arr8, mode="L").save(path)


def normalize(img01: np.ndarray) -> np.ndarray:
    """[0,1] display range to the network's [-0.5, 0.5] input range."""
    return img01 - 0.5


def denormalize(net_out: np.ndarray) -> np.ndarray:
    """Network range back to display range, clamped to [0,1]."""
    return np.clip(net_out + 0.5, 0.0, 1.0)


def random_crop(arrays: list[np.ndarray], size: int,
                rng: np.random.Generator) -> list[np.ndarray]:
    """Apply one random size x size window to every array (..., H, W)."""
    h, w = arrays[0].shape[-2], arrays[0].shape[-1]
    if size > h or size > w:
        raise InputError(f"crop size {size} exceeds image extents ({h},{w})")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return [a[..., top:top + size, left:left + size] for a in arrays]


# -- synthetic non-uniform blur ----------------------------------------------

@dataclasses.dataclass
class BlurField:
    """Spatially varying blur: two line kernels blended by a smooth map."""
    large_kernel: np.ndarray
    small_kernel: np.ndarray
    alpha: np.ndarray  # (H,W) in [0,1]; 1 selects the large-blur rendering
    sigma: float = 0.005


def line_kernel(angle: float, length: int) -> np.ndarray:
    """Normalized linear-motion kernel: unit mass splat at ``length`` points
    spaced one pixel apart along the given angle. Length 1 is a delta."""
    if length < 1:
        raise InputError(f"kernel length must be >= 1, got {length}")
    half = (length - 1) / 2.0
    size = 2 * int(math.ceil(half)) + 1
    k = np.zeros((size, size), dtype=np.float64)
    c = size // 2
    for i in range(length):
        t = i - half
        y = c + t * math.sin(angle)
        x = c + t * math.cos(angle)
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                           (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            if 0 <= y0 + dy < size and 0 <= x0 + dx < size:
                k[y0 + dy, x0 + dx] += wt
    return k / k.sum()


def random_blur_field(shape: tuple[int, int], rng: np.random.Generator,
                      large_length: tuple[int, int] = (9, 15),
                      small_length: tuple[int, int] = (1, 3),
                      sigma: float = 0.005) -> BlurField:
    """Random field: two line kernels plus a smoothed half-plane blend map."""
    h, w = shape
    large = line_kernel(rng.uniform(0, math.pi), int(rng.integers(*large_length)))
    small = line_kernel(rng.uniform(0, math.pi), int(rng.integers(small_length[0],
                                                                  small_length[1] + 1)))
    cy, cx = rng.uniform(0.25, 0.75) * h, rng.uniform(0.25, 0.75) * w
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    signed = (yy - cy) * math.sin(theta) + (xx - cx) * math.cos(theta)
    width = 0.1 * max(h, w)
    alpha = 1.0 / (1.0 + np.exp(-signed / width))
    return BlurField(large, small, alpha, sigma)


def synth_blur(sharp01: np.ndarray, field: BlurField,
               rng: np.random.Generator) -> np.ndarray:
    """B = alpha * (I (x) K_large) + (1 - alpha) * (I (x) K_small) + noise."""
    out = np.empty_like(sharp01)
    for ch in range(sharp01.shape[0]):
        big = convolve(sharp01[ch], field.large_kernel, mode="reflect")
        small = convolve(sharp01[ch], field.small_kernel, mode="reflect")
        out[ch] = field.alpha * big + (1.0 - field.alpha) * small
    if field.sigma > 0:
        out = out + rng.normal(0.0, field.sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


# -- Fig. 1 style diagnostics ------------------------------------------------

def _luma(img01: np.ndarray) -> np.ndarray:
    if img01.ndim == 3:
        return 0.299 * img01[0] + 0.587 * img01[1] + 0.114 * img01[2]
    return img01


def gradient_histogram(img01: np.ndarray, bins: int = 64) -> np.ndarray:
    """Histogram of forward-difference gradient magnitudes over [0,1].

    Mass equals (H-1)*(W-1); magnitudes above 1 land in the last bin.
    """
    y = _luma(img01)
    gy = y[1:, :-1] - y[:-1, :-1]
    gx = y[:-1, 1:] - y[:-1, :-1]
    mag = np.sqrt(gy * gy + gx * gx)
    counts, _ = np.histogram(np.clip(mag, 0.0, 1.0 - 1e-12), bins=bins, range=(0.0, 1.0))
    return counts


def fourier_spectrum(img01: np.ndarray) -> tuple[np.ndarray, float]:
    """Radial mean of the log-magnitude DFT plus the high-frequency ratio.

    hf_ratio = spectral energy beyond half the Nyquist radius divided by
    total energy with the DC bin excluded.
    """
    y = _luma(img01)
    h, w = y.shape
    spec = np.fft.fftshift(np.fft.fft2(y))
    power = np.abs(spec) ** 2
    logmag = np.log1p(np.abs(spec))
    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    rmax = min(h, w) // 2
    ri = np.minimum(r.astype(np.int64), rmax)
    profile = np.bincount(ri.ravel(), weights=logmag.ravel(), minlength=rmax + 1)
    counts = np.bincount(ri.ravel(), minlength=rmax + 1)
    profile = profile / np.maximum(counts, 1)
    dc = (yy == cy) & (xx == cx)
    total = power[~dc].sum()
    if total <= 0:
        return profile, 0.0
    high = power[(r > rmax / 2.0) & ~dc].sum()
    return profile, float(high / total)


# -- quality metrics ---------------------------------------------------------

def psnr(a01: np.ndarray, b01: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0,1]; inf if equal."""
    mse = float(np.mean((np.asarray(a01, dtype=np.float64) - b01) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a01: np.ndarray, b01: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Channel-averaged SSIM with an 11x11 Gaussian window, data range 1."""
    a = np.asarray(a01, dtype=np.float64)
    b = np.asarray(b01, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    win = _gaussian_window()
    c1, c2 = k1 ** 2, k2 ** 2
    scores = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mx = convolve(x, win, mode="reflect")
        my = convolve(y, win, mode="reflect")
        sxx = convolve(x * x, win, mode="reflect") - mx * mx
        syy = convolve(y * y, win, mode="reflect") - my * my
        sxy = convolve(x * y, win, mode="reflect") - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


# -- synthetic test content --------------------------------------------------

def synthetic_sharp_image(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """High-contrast synthetic scene (3,H,W) in [0,1]: smooth background,
    random rectangles, and a few hard lines; gives blur something to erase."""
    img = np.empty((3, h, w), dtype=np.float64)
    base = gaussian_filter(rng.random((h, w)), sigma=8.0)
    base = (base - base.min()) / max(float(np.ptp(base)), 1e-8)
    for ch in range(3):
        img[ch] = 0.2 + 0.6 * base
    for _ in range(10):
        y0 = int(rng.integers(0, h - 4))
        x0 = int(rng.integers(0, w - 4))
        hh = int(rng.integers(3, max(4, h // 3)))
        ww = int(rng.integers(3, max(4, w // 3)))
        color = rng.random(3)
        img[:, y0:min(y0 + hh, h), x0:min(x0 + ww, w)] = color[:, None, None]
    for _ in range(4):
        if rng.random() < 0.5:
            row = int(rng.integers(0, h))
            img[:, row, :] = rng.random(3)[:, None]
        else:
            col = int(rng.integers(0, w))
            img[:, :, col] = rng.random(3)[:, None]
    return np.clip(img, 0.0, 1.0)
