"""Shared resampling helpers with an explicit pixel-center convention.

Both resizers map output pixel d to the source coordinate
(d + 0.5) * (src / dst) - 0.5. Bilinear interpolates the four neighbors
(edge-clamped); nearest rounds the coordinate. Arrays may be (H, W) or
(H, W, C).
"""

from __future__ import annotations

import numpy as np

__all__ = ["resize_bilinear", "resize_nearest"]


def _source_coords(n_src: int, n_dst: int) -> np.ndarray:
    return (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5


def resize_bilinear(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = arr.shape[:2]
    oh, ow = out_hw
    if oh <= 0 or ow <= 0:
        raise ValueError("target size must be positive")
    sy = np.clip(_source_coords(h, oh), 0.0, h - 1.0)
    sx = np.clip(_source_coords(w, ow), 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).reshape(-1, 1)
    fx = (sx - x0).reshape(1, -1)
    if arr.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy


def resize_nearest(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = arr.shape[:2]
    oh, ow = out_hw
    if oh <= 0 or ow <= 0:
        raise ValueError("target size must be positive")
    sy = np.clip(np.rint(_source_coords(h, oh)).astype(int), 0, h - 1)
    sx = np.clip(np.rint(_source_coords(w, ow)).astype(int), 0, w - 1)
    return arr[np.ix_(sy, sx)].copy()
