"""PSNR and SSIM on [0,1] numpy arrays.

SSIM follows the original recipe: 11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03, valid-window map averaged per channel.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation over the trailing two axes
    size = kernel.size
    h, w = img.shape[-2], img.shape[-1]
    tmp = np.zeros(img.shape[:-2] + (h - size + 1, w), dtype=np.float64)
    for i, kv in enumerate(kernel):
        tmp += kv * img[..., i:i + h - size + 1, :]
    out = np.zeros(img.shape[:-2] + (h - size + 1, w - size + 1), dtype=np.float64)
    for j, kv in enumerate(kernel):
        out += kv * tmp[..., :, j:j + w - size + 1]
    return out


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Channel-averaged structural similarity of [C,H,W] (or [H,W]) images."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"ssim needs extents of at least {SSIM_WINDOW}, got {a.shape}")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    kernel = _gaussian_kernel()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    var_a = _filter_valid(a * a, kernel) - mu_a**2
    var_b = _filter_valid(b * b, kernel) - mu_b**2
    cov = _filter_valid(a * b, kernel) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(score.mean())
