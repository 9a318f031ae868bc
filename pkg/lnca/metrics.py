from __future__ import annotations

"""
Image quality metrics on (B, H, W, C) batches in [0, 1], computed in float64.

SSIM uses an 11×11 Gaussian window (sigma 1.5) over the valid region, the
usual stabilisers c1 = (0.01 L)², c2 = (0.03 L)², c3 = c2 / 2, and averages
the local map over space and channels.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """1-D Gaussian taps summing to 1; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter(a: np.ndarray, taps: np.ndarray) -> np.ndarray:
    a = np.lib.stride_tricks.sliding_window_view(a, taps.size, axis=1) @ taps
    return np.lib.stride_tricks.sliding_window_view(a, taps.size, axis=2) @ taps


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 3:
        x, y = x[None], y[None]
    if x.ndim != 4:
        raise ShapeError(f"expected (B, H, W, C) images, got shape {x.shape}")
    return x, y


def ssim_map(x: np.ndarray, y: np.ndarray, cfg: SSIMConfig = SSIMConfig()) -> np.ndarray:
    x, y = _check_pair(x, y)
    if cfg.window > x.shape[1] or cfg.window > x.shape[2]:
        raise ShapeError(f"SSIM window {cfg.window} is larger than the {x.shape[1]}x{x.shape[2]} image")
    taps = gaussian_window(cfg.window, cfg.sigma)
    mu_x = _filter(x, taps)
    mu_y = _filter(y, taps)
    var_x = _filter(x * x, taps) - mu_x * mu_x
    var_y = _filter(y * y, taps) - mu_y * mu_y
    cov = _filter(x * y, taps) - mu_x * mu_y
    c1, c2, c3 = cfg.c1, cfg.c2, cfg.c3

    if cfg.alpha == cfg.beta == cfg.gamma == 1.0:
        return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))

    sd_x = np.sqrt(np.maximum(var_x, 0.0))
    sd_y = np.sqrt(np.maximum(var_y, 0.0))
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    con = (2 * sd_x * sd_y + c2) / (var_x + var_y + c2)
    struct = (cov + c3) / (sd_x * sd_y + c3)
    return lum ** cfg.alpha * con ** cfg.beta * np.sign(struct) * np.abs(struct) ** cfg.gamma


def ssim(x: np.ndarray, y: np.ndarray, cfg: SSIMConfig = SSIMConfig()) -> tuple[np.ndarray, float]:
    """Per-image SSIM and their mean."""
    per_image = ssim_map(x, y, cfg).mean(axis=(1, 2, 3))
    return per_image, float(per_image.mean())


def psnr_mse(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> tuple[float, float]:
    """(PSNR in dB, MSE) over the whole batch; PSNR is +inf for identical inputs."""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf, 0.0
    return 10.0 * math.log10(data_range ** 2 / mse), mse


def psnr_mse_per_image(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> list[tuple[float, float]]:
    x, y = _check_pair(x, y)
    return [psnr_mse(x[i:i + 1], y[i:i + 1], data_range) for i in range(x.shape[0])]


def difference_image(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(H, W) uint8 map of the channel-mean absolute difference, scaled to full range."""
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).mean(axis=-1)
    peak = diff.max()
    if peak > 0:
        diff = diff / peak
    return np.clip(np.rint(diff * 255.0), 0, 255).astype(np.uint8)
