"""Photometric and geometric augmentation.

Geometric transforms (flips, affine) hit image and mask identically; the
mask is re-binarized at 0.5 after interpolation. Photometric jitter touches
the image only. Transforms whose policy magnitude is zero are skipped
entirely so an identity policy returns the input bitwise.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from .types import AugmentPolicy, Sample

__all__ = ["augment"]

log = logging.getLogger(__name__)

_MAX_AFFINE_TRIES = 10


def _photometric(img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    if policy.brightness > 0:
        img = img + rng.uniform(-policy.brightness, policy.brightness)
    if policy.contrast > 0:
        c = 1.0 + rng.uniform(-policy.contrast, policy.contrast)
        mean = img.mean()
        img = (img - mean) * c + mean
    if policy.saturation > 0:
        s = 1.0 + rng.uniform(-policy.saturation, policy.saturation)
        gray = img.mean(axis=2, keepdims=True)
        img = gray + (img - gray) * s
    return np.clip(img, 0.0, 1.0)


def _affine_matrix(canvas: int, angle_deg: float, tx: float, ty: float,
                   zoom: float) -> tuple[np.ndarray, np.ndarray]:
    """Inverse (output -> input) mapping for scipy.ndimage.affine_transform."""
    theta = np.deg2rad(angle_deg)
    center = (canvas - 1) / 2.0
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    fwd = rot * zoom
    inv = np.linalg.inv(fwd)
    # output pixel o maps back to input inv @ (o - center - t) + center, (row, col) order
    shift = np.array([ty, tx])
    offset = center - inv @ (center + shift)
    return inv, offset


def _apply_affine(img: np.ndarray, mask: np.ndarray, inv: np.ndarray,
                  offset: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out_img = np.stack([
        ndimage.affine_transform(img[..., c], inv, offset=offset, order=1,
                                 mode="constant", cval=0.0)
        for c in range(img.shape[2])
    ], axis=2)
    soft = ndimage.affine_transform(mask.astype(np.float64), inv, offset=offset,
                                    order=1, mode="constant", cval=0.0)
    return np.clip(out_img, 0.0, 1.0), (soft > 0.5).astype(np.uint8)


def augment(sample: Sample, policy: AugmentPolicy, seed: int) -> Sample:
    """Pure function of (sample, policy, seed)."""
    policy.validate()
    if policy.is_identity():
        return sample.copy()
    rng = np.random.default_rng(seed)
    img = _photometric(sample.image.copy(), policy, rng)
    mask = sample.mask.copy()

    if policy.flip_h > 0 and rng.random() < policy.flip_h:
        img = np.flip(img, axis=1).copy()
        mask = np.flip(mask, axis=1).copy()
    if policy.flip_v > 0 and rng.random() < policy.flip_v:
        img = np.flip(img, axis=0).copy()
        mask = np.flip(mask, axis=0).copy()

    if policy.rotation > 0 or policy.translate > 0 or policy.scale > 0:
        canvas = sample.image.shape[0]
        for _ in range(_MAX_AFFINE_TRIES):
            angle = rng.uniform(-policy.rotation, policy.rotation) if policy.rotation > 0 else 0.0
            tx = rng.uniform(-policy.translate, policy.translate) * canvas if policy.translate > 0 else 0.0
            ty = rng.uniform(-policy.translate, policy.translate) * canvas if policy.translate > 0 else 0.0
            zoom = 1.0 + (rng.uniform(-policy.scale, policy.scale) if policy.scale > 0 else 0.0)
            inv, offset = _affine_matrix(canvas, angle, tx, ty, zoom)
            cand_img, cand_mask = _apply_affine(img, mask, inv, offset)
            if cand_mask.any():
                img, mask = cand_img, cand_mask
                break
        else:
            log.warning("affine retries exhausted (foreground left the frame); "
                        "returning the untransformed sample")
            return sample.copy()

    return Sample(image=img, mask=mask, class_id=sample.class_id,
                  domain_id=sample.domain_id)
