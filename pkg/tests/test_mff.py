"""Feature fusion: linearity, shape contract, gradient reach."""

import numpy as np
import pytest

from tavp.backbone import Backbone, EncoderConfig
from tavp.mff import UPSAMPLE_FACTOR, FeatureFusion, FusedFeature
from tavp.nn import Tensor


def _inputs(seed: int, c_l: int = 8, c_m: int = 6, grid: int = 4):
    rng = np.random.default_rng(seed)
    early = rng.normal(size=(c_l, grid, grid))
    global_ = rng.normal(size=(c_l, grid, grid))
    mask = rng.normal(size=(c_m, grid * UPSAMPLE_FACTOR, grid * UPSAMPLE_FACTOR))
    return early, global_, mask


def test_zero_pyramid_zero_output():
    fusion = FeatureFusion(8, 6, seed=0)
    out = fusion(np.zeros((8, 4, 4)), np.zeros((8, 4, 4)), np.zeros((6, 16, 16)))
    assert isinstance(out, FusedFeature)
    np.testing.assert_array_equal(out.feature.data, np.zeros((6, 16, 16)))


def test_linearity_in_all_inputs():
    fusion = FeatureFusion(8, 6, seed=1)
    e1, g1, m1 = _inputs(1)
    e2, g2, m2 = _inputs(2)
    summed = fusion(e1 + e2, g1 + g2, m1 + m2).feature.data
    parts = fusion(e1, g1, m1).feature.data + fusion(e2, g2, m2).feature.data
    np.testing.assert_allclose(summed, parts, atol=1e-10)


def test_shape_trace_16_to_64():
    fusion = FeatureFusion(8, 6, seed=2)
    rng = np.random.default_rng(0)
    out = fusion(rng.normal(size=(8, 16, 16)), rng.normal(size=(8, 16, 16)),
                 rng.normal(size=(6, 64, 64)))
    assert out.feature.shape == (6, 64, 64)


def test_shape_contract_other_grid():
    fusion = FeatureFusion(4, 3, seed=3)
    rng = np.random.default_rng(0)
    out = fusion(rng.normal(size=(4, 8, 8)), rng.normal(size=(4, 8, 8)),
                 rng.normal(size=(3, 32, 32)))
    assert out.feature.shape == (3, 32, 32)


def test_channel_and_size_mismatches_rejected():
    fusion = FeatureFusion(8, 6, seed=4)
    e, g, m = _inputs(0)
    with pytest.raises(ValueError):
        fusion(e[:4], g, m)
    with pytest.raises(ValueError):
        fusion(e, g, m[:3])
    with pytest.raises(ValueError):
        fusion(e, g, m[:, :8, :8])
    with pytest.raises(ValueError):
        FeatureFusion(0, 6)


def test_bilinear_upsample_init_block_pattern():
    # kernel == stride means no kernel overlap: each input pixel owns one
    # 4x4 output block equal to value * outer(w, w) with the 1d bilinear
    # filler w = [0.25, 0.75, 0.75, 0.25].
    fusion = FeatureFusion(1, 1, seed=5)
    up = fusion.up_early(Tensor(np.full((1, 4, 4), 2.0))).data
    assert up.shape == (1, 16, 16)
    w = np.array([0.25, 0.75, 0.75, 0.25])
    block = 2.0 * np.outer(w, w)
    np.testing.assert_allclose(up[0], np.tile(block, (4, 4)), atol=1e-12)


def test_gradients_reach_fusion_but_not_backbone():
    cfg = EncoderConfig(image_size=32, patch_size=4, depth=2, early_block_index=1,
                        channels=8, heads=2)
    backbone = Backbone(cfg, seed=0)
    fusion = FeatureFusion(8, 6, seed=6)
    rng = np.random.default_rng(1)
    pyramid = backbone.encode(rng.uniform(size=(32, 32, 3)))
    mask_feature = rng.normal(size=(6, 32, 32))
    out = fusion(pyramid.early_feature, pyramid.global_feature, mask_feature)
    (out.feature * out.feature).sum().backward()
    grads = {name: p.grad for name, p in fusion.named_parameters()}
    assert all(g is not None for g in grads.values())
    assert any(np.abs(g).max() > 0 for g in grads.values())
    assert all(p.grad is None for _, p in backbone.named_parameters())


def test_fuse_accepts_feature_pyramid():
    cfg = EncoderConfig(image_size=32, patch_size=4, depth=2, early_block_index=1,
                        channels=8, heads=2)
    backbone = Backbone(cfg, seed=0)
    fusion = FeatureFusion(8, 6, seed=7)
    pyramid = backbone.encode(np.random.default_rng(2).uniform(size=(32, 32, 3)))
    with pytest.raises(ValueError):
        fusion.fuse(pyramid)  # mask feature not yet populated
    pyramid.mask_feature = np.zeros((6, 32, 32))
    out = fusion.fuse(pyramid)
    assert out.feature.shape == (6, 32, 32)


def test_determinism_same_seed_same_params():
    a = FeatureFusion(8, 6, seed=11)
    b = FeatureFusion(8, 6, seed=11)
    for (name_a, pa), (name_b, pb) in zip(sorted(a.named_parameters()),
                                          sorted(b.named_parameters())):
        assert name_a == name_b
        np.testing.assert_array_equal(pa.data, pb.data)
