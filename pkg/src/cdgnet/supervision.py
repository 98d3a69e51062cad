"""Sharpness mask and the three training losses.

The external sharpness estimator cited for the mask is replaced by a
documented proxy: Gaussian-smoothed gradient magnitude of the luma channel,
normalized by its 99.5th percentile. The binary mask thresholds that map;
the boundary case S == mu maps to 0 (sign(0) = 0).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError, ShapeError
from .tensor import Tensor, tmean

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def sharpness_map(image01: np.ndarray) -> np.ndarray:
    """Proxy sharpness in [0,1] for an image (N,3,H,W) or (3,H,W) in [0,1].

    Returns (N,1,H,W). Constant images map to all zeros (denominator floor).
    """
    img = image01 if image01.ndim == 4 else image01[None]
    n = img.shape[0]
    out = np.empty((n, 1, img.shape[2], img.shape[3]), dtype=np.float64)
    for i in range(n):
        luma = (LUMA_WEIGHTS[0] * img[i, 0] + LUMA_WEIGHTS[1] * img[i, 1]
                + LUMA_WEIGHTS[2] * img[i, 2])
        gy, gx = np.gradient(luma)
        mag = gaussian_filter(np.sqrt(gy * gy + gx * gx), sigma=2.0)
        denom = max(np.percentile(mag, 99.5), 1e-8)
        out[i, 0] = np.clip(mag / denom, 0.0, 1.0)
    return out


def sharpness_mask(s: np.ndarray, mu: float) -> np.ndarray:
    """M(x) = max(0, sign(S(x) - mu)); strictly binary, S == mu maps to 0."""
    return np.maximum(0.0, np.sign(s - mu))


def load_mask_image(gray8: np.ndarray) -> np.ndarray:
    """Convert an externally computed 8-bit mask to {0,1}; 255 -> 1, 0 -> 0."""
    if not np.isin(gray8, (0, 255)).all():
        bad = int(gray8[(gray8 != 0) & (gray8 != 255)].flat[0])
        raise InputError(f"mask file contains value {bad}; only 0 and 255 are allowed")
    return (gray8 == 255).astype(np.float64)


def branch_targets(i_gt: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """S_gt = M * I_gt (sharp regions), L_gt = (1 - M) * I_gt; sums to I_gt."""
    s_gt = mask * i_gt
    l_gt = i_gt - s_gt
    return s_gt, l_gt


def mse_loss(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements."""
    b_data = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a.shape != b_data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {a.shape} vs {b_data.shape}")
    diff = a - (b if isinstance(b, Tensor) else Tensor(b_data.astype(a.data.dtype)))
    return tmean(diff * diff)


def total_loss(i_hat: Tensor, l_img: Tensor, s_img: Tensor, i_gt: np.ndarray,
               mask: np.ndarray, lambda1: float = 0.1, lambda2: float = 0.1,
               ) -> tuple[Tensor, dict[str, float]]:
    """loss = rec + lambda1 * small-branch + lambda2 * large-branch.

    ``mask`` is (N,1,H,W) binary and broadcasts over the RGB channels of
    ``i_gt``. Returns the scalar loss tensor plus per-term values for logging.
    """
    s_gt, l_gt = branch_targets(np.asarray(i_gt), np.asarray(mask))
    rec = mse_loss(i_hat, np.asarray(i_gt))
    l_s = mse_loss(s_img, np.broadcast_to(s_gt, s_img.shape))
    l_l = mse_loss(l_img, np.broadcast_to(l_gt, l_img.shape))
    total = rec + lambda1 * l_s + lambda2 * l_l
    parts = {"rec": float(rec.data), "s": float(l_s.data), "l": float(l_l.data)}
    return total, parts
