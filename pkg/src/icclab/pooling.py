"""Average pooling over 2-D feature grids with stride = kernel, no padding."""

from __future__ import annotations

import numpy as np


class KernelTooLarge(ValueError):
    """Kernel exceeds a grid dimension."""


# an H x W x D array of reals (or H x W, treated as depth 1); all dims >= 1
FeatureGrid = np.ndarray


def avg_pool2d(grid: FeatureGrid, k: int) -> FeatureGrid:
    """Mean over non-overlapping k x k windows; trailing rows/cols that do
    not fill a window are dropped, so output dims are floor(H/k) x floor(W/k)."""
    grid = np.asarray(grid)
    if grid.ndim == 2:
        return avg_pool2d(grid[:, :, None], k)[:, :, 0]
    if grid.ndim != 3:
        raise ValueError(f"grid must be HxW or HxWxD, got shape {grid.shape}")
    h, w, d = grid.shape
    if min(h, w, d) < 1:
        raise ValueError("all grid dimensions must be >= 1")
    if k < 1:
        raise ValueError(f"kernel must be >= 1, got {k}")
    if k > min(h, w):
        raise KernelTooLarge(f"kernel {k} exceeds grid {h}x{w}")
    ho, wo = h // k, w // k
    cropped = grid[: ho * k, : wo * k, :]
    return cropped.reshape(ho, k, wo, k, d).mean(axis=(1, 3))


def pooled_token_count(h: int, w: int, k: int) -> int:
    if k > min(h, w):
        raise KernelTooLarge(f"kernel {k} exceeds grid {h}x{w}")
    return (h // k) * (w // k)
