"""PSNR and SSIM, plus the per-image evaluation table.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5, K1=0.01,
K2=0.03) and averages over valid (fully inside) window positions only;
SSIM numbers are implementation-sensitive, so these choices are fixed
here rather than configurable defaults scattered around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = ["SSIMConfig", "psnr", "ssim", "evaluate_pairs", "metrics_csv"]


@dataclass(frozen=True)
class SSIMConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    peak: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("K1 and K2 must be positive")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 1")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the images are identical."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def _window_means(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = sliding_window_view(img, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig = SSIMConfig()) -> float:
    """Mean structural-similarity index over valid window positions."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    a2d = a[0] if a.ndim == 3 and a.shape[0] == 1 else a
    b2d = b[0] if b.ndim == 3 and b.shape[0] == 1 else b
    if a2d.ndim != 2:
        raise ShapeError(f"ssim needs single-channel images, got shape {a.shape}")
    if min(a2d.shape) < cfg.window_size:
        raise ValueError(f"image {a2d.shape} smaller than the {cfg.window_size}px window")
    window = _gaussian_window(cfg.window_size, cfg.sigma)
    mu1 = _window_means(a2d, window)
    mu2 = _window_means(b2d, window)
    var1 = _window_means(a2d * a2d, window) - mu1 * mu1
    var2 = _window_means(b2d * b2d, window) - mu2 * mu2
    cov = _window_means(a2d * b2d, window) - mu1 * mu2
    c1 = (cfg.k1 * cfg.peak) ** 2
    c2 = (cfg.k2 * cfg.peak) ** 2
    ssim_map = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    )
    return float(ssim_map.mean())


def evaluate_pairs(method, pairs, cfg: SSIMConfig = SSIMConfig()) -> list[tuple[str, float, float]]:
    """Per-image (name, PSNR, SSIM) rows for a reconstruction method.

    ``method`` maps (target_lr_up, guidance) to a reconstruction; outputs
    are clamped to [0,1] before scoring.  Pass ``lambda lr, g: lr`` for
    the bicubic baseline.
    """
    if not pairs:
        raise ValueError("no image pairs to evaluate")
    rows = []
    for pair in pairs:
        pred = np.clip(method(pair.target_lr_up, pair.guidance), 0.0, 1.0)
        rows.append(
            (
                pair.name,
                psnr(pred, pair.target_hr, peak=cfg.peak),
                ssim(pred, pair.target_hr, cfg),
            )
        )
    return rows


def metrics_csv(rows: list[tuple[str, float, float]]) -> str:
    """CSV with one row per image and a final arithmetic-mean row."""
    lines = ["image,psnr_db,ssim"]
    for name, p, s in rows:
        lines.append(f"{name},{p!r},{s!r}")
    mean_p = sum(p for _, p, _ in rows) / len(rows)
    mean_s = sum(s for _, _, s in rows) / len(rows)
    lines.append(f"average,{mean_p!r},{mean_s!r}")
    return "\n".join(lines) + "\n"
