"""Multi-level feature fusion.

Early and global encoder features are upsampled 4x by learned transposed
convolutions (kernel 4, stride 4, bilinear-initialized), passed through one
3x3 convolution each, the mask feature through one 3x3 convolution, and the
three branches summed element-wise. There are no nonlinearities, so fusion
is linear in the pyramid whenever the biases are zero (they start at zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import FeaturePyramid
from .nn import Conv2d, ConvTranspose2d, Module, Tensor

__all__ = ["FusedFeature", "FeatureFusion"]

UPSAMPLE_FACTOR = 4


@dataclass
class FusedFeature:
    feature: Tensor  # C_m x H_m x W_m


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class FeatureFusion(Module):
    def __init__(self, encoder_channels: int, mask_channels: int, seed: int = 0):
        if encoder_channels <= 0 or mask_channels <= 0:
            raise ValueError("channel counts must be positive")
        rng = np.random.default_rng(seed)
        c_l, c_m = encoder_channels, mask_channels
        self.encoder_channels = c_l
        self.mask_channels = c_m
        self.up_early = ConvTranspose2d(c_l, c_m, UPSAMPLE_FACTOR, rng, init="bilinear")
        self.up_global = ConvTranspose2d(c_l, c_m, UPSAMPLE_FACTOR, rng, init="bilinear")
        self.conv_early = Conv2d(c_m, c_m, 3, rng)
        self.conv_global = Conv2d(c_m, c_m, 3, rng)
        self.conv_mask = Conv2d(c_m, c_m, 3, rng)

    def forward(self, early, global_, mask_feature) -> FusedFeature:
        early, global_, mask_feature = map(_as_tensor, (early, global_, mask_feature))
        if early.shape[0] != self.encoder_channels or global_.shape[0] != self.encoder_channels:
            raise ValueError(
                f"encoder features must have {self.encoder_channels} channels, "
                f"got {early.shape[0]} and {global_.shape[0]}")
        if mask_feature.shape[0] != self.mask_channels:
            raise ValueError(
                f"mask feature must have {self.mask_channels} channels, got {mask_feature.shape[0]}")
        want_hw = (early.shape[1] * UPSAMPLE_FACTOR, early.shape[2] * UPSAMPLE_FACTOR)
        if mask_feature.shape[1:] != want_hw:
            raise ValueError(
                f"mask feature spatial size {mask_feature.shape[1:]} does not equal "
                f"{UPSAMPLE_FACTOR}x the encoder grid {early.shape[1:]}")
        a = self.conv_early(self.up_early(early))
        b = self.conv_global(self.up_global(global_))
        c = self.conv_mask(mask_feature)
        return FusedFeature(feature=a + b + c)

    def fuse(self, pyramid: FeaturePyramid) -> FusedFeature:
        pyramid.require_full()
        return self.forward(pyramid.early_feature, pyramid.global_feature,
                            pyramid.mask_feature)
