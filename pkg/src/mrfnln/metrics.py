"""Image quality metrics computed in float64 on [0, peak] arrays.

PSNR returns +inf for identical inputs.  SSIM is the single-scale variant
with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, reflect boundary
handling, averaged over channels.  Both accept [H,W] or [H,W,C] arrays and
are evaluated on full images without cropping.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate

from .errors import ShapeMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1 = 0.01
K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"metric inputs differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise ShapeMismatchError(f"expected [H,W] or [H,W,C], got {a.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    win = gaussian_window()
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2

    def smooth(img):
        return correlate(img, win, mode="reflect")

    values = []
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mu_x = smooth(x)
        mu_y = smooth(y)
        xx = smooth(x * x) - mu_x * mu_x
        yy = smooth(y * y) - mu_y * mu_y
        xy = smooth(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


def psnr_batch(outputs, targets, peak: float = 1.0):
    """Mean PSNR over a list of image pairs; inf propagates if any pair is exact."""
    vals = [psnr(o, t, peak) for o, t in zip(outputs, targets)]
    return float(np.mean(vals))
