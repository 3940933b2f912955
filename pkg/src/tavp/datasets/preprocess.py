"""Real-benchmark preprocessing: grid tiling and square resizing."""

from __future__ import annotations

import numpy as np

from ..imageops import resize_bilinear, resize_nearest
from .types import Sample

__all__ = ["tile_grid", "tile_deepglobe", "resize_benchmark",
           "DEEPGLOBE_INPUT", "DEEPGLOBE_TILE", "DEEPGLOBE_UNKNOWN"]

DEEPGLOBE_INPUT = 2448
DEEPGLOBE_TILE = 408
DEEPGLOBE_UNKNOWN = 6  # 7-class label maps use indices 0..6, 6 = unknown


def tile_grid(arr: np.ndarray, tile: int) -> list[tuple[int, int, np.ndarray]]:
    """Non-overlapping tiles in row-major order as (row, col, tile_array)."""
    h, w = arr.shape[:2]
    if h % tile != 0 or w % tile != 0:
        raise ValueError(f"array {h}x{w} is not divisible into {tile}px tiles")
    out = []
    for r in range(h // tile):
        for c in range(w // tile):
            out.append((r, c, arr[r * tile:(r + 1) * tile, c * tile:(c + 1) * tile]))
    return out


def tile_deepglobe(image: np.ndarray, label_map: np.ndarray,
                   unknown_label: int = DEEPGLOBE_UNKNOWN,
                   domain_id: str = "deepglobe") -> list[Sample]:
    """Cut a 2448x2448 record into 36 tiles of 408px and binarize per class.

    Tiles containing a single class or any pixel of the unknown category are
    dropped. Each surviving tile yields one Sample per class present in it,
    with the mask binarized against that class.
    """
    if image.shape[:2] != (DEEPGLOBE_INPUT, DEEPGLOBE_INPUT):
        raise ValueError(f"expected {DEEPGLOBE_INPUT}x{DEEPGLOBE_INPUT} input, "
                         f"got {image.shape[:2]}")
    if label_map.shape != (DEEPGLOBE_INPUT, DEEPGLOBE_INPUT):
        raise ValueError("label map must match the image size")
    img_tiles = tile_grid(image, DEEPGLOBE_TILE)
    lab_tiles = tile_grid(label_map, DEEPGLOBE_TILE)
    out: list[Sample] = []
    for (_, _, img_t), (_, _, lab_t) in zip(img_tiles, lab_tiles):
        classes = np.unique(lab_t)
        if unknown_label in classes or len(classes) < 2:
            continue
        for cls in classes:
            out.append(Sample(image=np.ascontiguousarray(img_t, dtype=np.float64),
                              mask=(lab_t == cls).astype(np.uint8),
                              class_id=int(cls), domain_id=domain_id))
    return out


def resize_benchmark(sample: Sample, target: int) -> Sample:
    """Square resize: bilinear for the image, nearest for the mask."""
    if target <= 0:
        raise ValueError("target size must be positive")
    img = resize_bilinear(sample.image, (target, target))
    mask = resize_nearest(sample.mask, (target, target))
    return Sample(image=np.clip(img, 0.0, 1.0), mask=mask.astype(np.uint8),
                  class_id=sample.class_id, domain_id=sample.domain_id)
