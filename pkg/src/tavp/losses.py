"""Segmentation losses with numerically stable, gradient-checked forms.

All losses accept Tensors or plain arrays and return scalar Tensors so they
can sit on the training graph. Cross-entropy is computed from logits in the
softplus form, softplus(z) - z*m, which equals the binary cross-entropy
-[m log s(z) + (1-m) log(1-s(z))] without overflow for large |z|. Dice
consumes probabilities and is smoothed by eps to stay defined on empty
masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageops import resize_nearest
from .nn import Tensor

__all__ = [
    "LossConfig",
    "dice_loss",
    "ce_loss",
    "bce_loss",
    "seg_loss",
    "dem_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossConfig:
    dice_weight: float = 0.5  # convex mix: (1-w)*ce + w*dice
    eps_dice: float = 1e-6

    def validate(self) -> None:
        if not 0.0 <= self.dice_weight <= 1.0:
            raise ValueError("dice_weight must lie in [0, 1]")
        if self.eps_dice <= 0.0:
            raise ValueError("eps_dice must be positive")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_shapes(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def dice_loss(probs, mask, eps: float = 1e-6) -> Tensor:
    """1 - (2 sum(p*m) + eps) / (sum(p) + sum(m) + eps); lies in [0, 1]."""
    probs, mask = _as_tensor(probs), _as_tensor(mask)
    _check_shapes(probs, mask, "dice_loss")
    inter = (probs * mask).sum()
    denom = probs.sum() + mask.sum() + eps
    return 1.0 - (2.0 * inter + eps) / denom


def bce_loss(logits, mask) -> Tensor:
    """Mean binary cross-entropy from logits, softplus-stabilized."""
    logits, mask = _as_tensor(logits), _as_tensor(mask)
    _check_shapes(logits, mask, "bce_loss")
    return (logits.softplus() - logits * mask).mean()


def ce_loss(logits, mask) -> Tensor:
    """Mean cross-entropy over the two classes (fg, bg) from a single logit map.

    For a one-vs-background task the two-class cross-entropy reduces to the
    binary form, so this shares bce_loss's stabilized computation.
    """
    return bce_loss(logits, mask)


def seg_loss(logits, mask, config: LossConfig = LossConfig()) -> Tensor:
    """(1 - w) * cross-entropy + w * dice on sigmoid probabilities."""
    config.validate()
    logits, mask = _as_tensor(logits), _as_tensor(mask)
    w = config.dice_weight
    ce = ce_loss(logits, mask)
    dice = dice_loss(logits.sigmoid(), mask, eps=config.eps_dice)
    return (1.0 - w) * ce + w * dice


def dem_loss(z_logits, mask, eps: float = 1e-6) -> Tensor:
    """BCE + dice supervising the dense-embedding logit channel.

    The mask is nearest-neighbor downsampled to the logit resolution when
    the shapes differ (binarity preserved); a mismatch after that is an
    error.
    """
    z_logits = _as_tensor(z_logits)
    mask_arr = np.asarray(mask.data if isinstance(mask, Tensor) else mask,
                          dtype=np.float64)
    if mask_arr.shape != tuple(z_logits.shape):
        if mask_arr.ndim != 2 or len(z_logits.shape) != 2:
            raise ValueError("dem_loss expects 2d logit and mask maps")
        mask_arr = resize_nearest(mask_arr, tuple(z_logits.shape))
    if mask_arr.shape != tuple(z_logits.shape):
        raise ValueError(
            f"mask {mask_arr.shape} cannot align with logits {tuple(z_logits.shape)}")
    target = Tensor(mask_arr)
    return bce_loss(z_logits, target) + dice_loss(z_logits.sigmoid(), target, eps=eps)


def total_loss(seg, dem) -> Tensor:
    """Sum of the segmentation and dense-embedding terms."""
    return _as_tensor(seg) + _as_tensor(dem)
