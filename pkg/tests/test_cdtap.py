"""Prototype pooling, cycle matching, anchor transform, dense prompts.

The oracles here are written independently of the library code: explicit
per-pixel loops for pooling and bilinear weights, an O(N^2) double loop for
matching, and direct linear solves for the transform.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tavp.cdtap import (
    CdtapModule,
    CycleMatchResult,
    DegenerateMask,
    DenseEmbedding,
    DensePromptNet,
    Prototype,
    apply_transform,
    cycle_match,
    masked_prototype,
    normalize_pair,
    solve_transform,
)
from tavp.nn import Adam, Tensor

# ---------------------------------------------------------------------------
# oracles


def oracle_bilinear(src: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Pixel-center bilinear resample with explicit loops and edge clamping."""
    sh, sw = src.shape
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            sy = (r + 0.5) * sh / oh - 0.5
            sx = (c + 0.5) * sw / ow - 0.5
            y0, x0 = math.floor(sy), math.floor(sx)
            dy, dx = sy - y0, sx - x0
            ys = (min(max(y0, 0), sh - 1), min(max(y0 + 1, 0), sh - 1))
            xs = (min(max(x0, 0), sw - 1), min(max(x0 + 1, 0), sw - 1))
            out[r, c] = ((1 - dy) * (1 - dx) * src[ys[0], xs[0]]
                         + (1 - dy) * dx * src[ys[0], xs[1]]
                         + dy * (1 - dx) * src[ys[1], xs[0]]
                         + dy * dx * src[ys[1], xs[1]])
    return out


def oracle_masked_prototype(feature: np.ndarray, mask: np.ndarray,
                            region: str) -> np.ndarray:
    """Per-pixel weighted average; mask resampled by the loop oracle if needed."""
    c, h, w = feature.shape
    weights = mask.astype(np.float64)
    if region == "bg":
        weights = 1.0 - weights
    if weights.shape != (h, w):
        weights = oracle_bilinear(weights, h, w)
    num, den = np.zeros(c), 0.0
    for i in range(h):
        for j in range(w):
            den += weights[i, j]
            for k in range(c):
                num[k] += feature[k, i, j] * weights[i, j]
    return num / den


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na = max(math.sqrt(float((a * a).sum())), 1e-12)
    nb = max(math.sqrt(float((b * b).sum())), 1e-12)
    return float(np.dot(a / na, b / nb))


def oracle_cycle_match(sf: np.ndarray, mask: np.ndarray, qf: np.ndarray):
    """O(N^2) exhaustive matching; returns per-pass (matches, kept, proto)."""
    c, h, w = sf.shape
    n = h * w
    s = sf.reshape(c, n).T
    q = qf.reshape(c, n).T
    region_fg = mask.ravel().astype(bool)

    def run(region):
        matches, kept = [], []
        for u in range(n):
            if not region[u]:
                continue
            best_j, best = 0, -math.inf
            for j in range(n):
                sim = _cos(s[u], q[j])
                if sim > best:
                    best, best_j = sim, j
            back_i, back = 0, -math.inf
            for i in range(n):
                sim = _cos(s[i], q[best_j])
                if sim > back:
                    back, back_i = sim, i
            ok = bool(region[back_i])
            matches.append((divmod(best_j, w), divmod(back_i, w), ok))
            if ok:
                kept.append(best_j)
        proto = (np.mean([q[j] for j in sorted(set(kept))], axis=0)
                 if kept else None)
        return matches, sorted(set(kept)), proto

    return run(region_fg), run(~region_fg)


# ---------------------------------------------------------------------------
# masked_prototype


def test_constant_feature_any_mask():
    feature = np.full((5, 6, 6), 3.25)
    mask = np.zeros((6, 6))
    mask[2:4, 1:5] = 1
    proto = masked_prototype(feature, mask, "fg")
    np.testing.assert_allclose(proto.vector, 3.25, rtol=1e-12)
    assert proto.kind == "foreground"


def test_full_mask_is_global_mean():
    rng = np.random.default_rng(0)
    feature = rng.normal(size=(4, 5, 5))
    proto = masked_prototype(feature, np.ones((5, 5)), "fg")
    np.testing.assert_allclose(proto.vector, feature.mean(axis=(1, 2)), rtol=1e-12)


def test_random_4x4_against_loop_oracle():
    rng = np.random.default_rng(1)
    feature = rng.normal(size=(3, 4, 4))
    mask = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
    mask[0, 0] = 1.0  # keep fg nonempty
    mask[3, 3] = 0.0  # keep bg nonempty
    for region in ("fg", "bg"):
        got = masked_prototype(feature, mask, region).vector
        want = oracle_masked_prototype(feature, mask, region)
        assert np.abs(got - want).max() / np.abs(want).max() <= 1e-6


def test_downsampled_mask_against_loop_oracle():
    rng = np.random.default_rng(2)
    for case in range(25):
        c = int(rng.integers(1, 5))
        g = int(rng.integers(2, 7))
        scale = int(rng.integers(1, 5))
        feature = rng.normal(size=(c, g, g))
        mask = (rng.uniform(size=(g * scale, g * scale)) > 0.5).astype(float)
        if mask.sum() == 0 or mask.sum() == mask.size:
            mask[0, 0] = 1.0 - mask[0, 0]
        for region in ("fg", "bg"):
            got = masked_prototype(feature, mask, region).vector
            want = oracle_masked_prototype(feature, mask, region)
            scale_ref = max(np.abs(want).max(), 1e-12)
            assert np.abs(got - want).max() / scale_ref <= 1e-6, f"case {case}"


def test_empty_regions_raise():
    feature = np.ones((2, 4, 4))
    with pytest.raises(DegenerateMask):
        masked_prototype(feature, np.zeros((4, 4)), "fg")
    with pytest.raises(DegenerateMask):
        masked_prototype(feature, np.ones((4, 4)), "bg")


def test_vanishing_downsampled_weight_raises():
    # A single lit pixel in a 64x64 mask pooled onto a 2x2 grid keeps a
    # small positive weight, so construct a strict zero instead: masks are
    # binary, so exact zero after downsampling needs an empty mask region,
    # which the full-resolution check already catches. Verify the epsilon
    # path with a direct near-zero float mask.
    feature = np.ones((2, 2, 2))
    tiny = np.full((2, 2), 1e-12)
    with pytest.raises(DegenerateMask):
        masked_prototype(feature, tiny, "fg")


def test_bad_region_and_shape():
    with pytest.raises(ValueError):
        masked_prototype(np.ones((2, 3, 3)), np.ones((3, 3)), "both")
    with pytest.raises(ValueError):
        masked_prototype(np.ones((3, 3)), np.ones((3, 3)), "fg")


# ---------------------------------------------------------------------------
# normalize_pair


def _pair(fg_vec, bg_vec):
    return (Prototype(np.asarray(fg_vec, dtype=float), "foreground", "support"),
            Prototype(np.asarray(bg_vec, dtype=float), "background", "support"))


def test_three_four_five_triangle():
    pair = normalize_pair(*_pair([3.0, 4.0], [0.0, 2.0]))
    np.testing.assert_allclose(pair.fg.vector, [0.6, 0.8], rtol=1e-12)
    np.testing.assert_allclose(pair.bg.vector, [0.0, 1.0], rtol=1e-12)


def test_unit_vector_idempotent():
    v = np.array([1.0, 0.0, 0.0])
    pair = normalize_pair(*_pair(v, [0, 1, 0]))
    np.testing.assert_allclose(pair.fg.vector, v, atol=1e-7)


def test_zero_vector_rejected():
    with pytest.raises(ValueError):
        normalize_pair(*_pair([0.0, 0.0], [1.0, 0.0]))


@settings(max_examples=40, deadline=None)
@given(c=st.floats(min_value=1e-3, max_value=1e3),
       seed=st.integers(min_value=0, max_value=999))
def test_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    fg, bg = rng.normal(size=4) + 0.1, rng.normal(size=4) - 0.1
    base = normalize_pair(*_pair(fg, bg))
    scaled = normalize_pair(*_pair(c * fg, c * bg))
    np.testing.assert_allclose(scaled.fg.vector, base.fg.vector, atol=1e-9)
    np.testing.assert_allclose(scaled.bg.vector, base.bg.vector, atol=1e-9)
    assert abs(np.linalg.norm(base.fg.vector) - 1.0) <= 1e-6


# ---------------------------------------------------------------------------
# cycle_match


def _grid_mask(h, w, fg_positions):
    mask = np.zeros((h, w), dtype=np.uint8)
    for r, c in fg_positions:
        mask[r, c] = 1
    return mask


def test_identity_matching():
    rng = np.random.default_rng(3)
    feat = rng.normal(size=(6, 4, 4))
    mask = _grid_mask(4, 4, [(0, 1), (1, 1), (2, 3)])
    fg_proto, bg_proto, matches = cycle_match(feat, mask, feat.copy())
    assert len(matches) == 3
    fg_positions = [(0, 1), (1, 1), (2, 3)]
    for m, pos in zip(matches, fg_positions):
        assert m.i_s2q == pos  # each position matches itself
        assert m.j_q2s == pos
        assert m.cycle_consistent
    want = masked_prototype(feat, mask, "fg").vector
    assert np.abs(fg_proto.vector - want).max() <= 1e-6
    assert fg_proto.source == "query"
    assert bg_proto.kind == "background"


def test_planted_pixel_unique_survivor():
    c, h, w = 8, 3, 3
    f0 = np.zeros(c)
    f0[0] = 1.0
    g0 = np.zeros(c)
    g0[1] = 1.0
    support = np.zeros((c, h, w))
    query = np.zeros((c, h, w))
    mask = _grid_mask(h, w, [(0, 0), (1, 1), (2, 2)])
    for r in range(h):
        for cc in range(w):
            if mask[r, cc]:
                support[:, r, cc] = f0
            else:
                support[:, r, cc] = g0
            # query positions orthogonal to both support directions
            query[2 + (r * w + cc) % (c - 2), r, cc] = 1.0
    query[:, 1, 2] = f0  # planted foreground twin
    query[:, 2, 0] = g0  # planted background twin
    result = cycle_match(support, mask, query)
    assert all(m.i_s2q == (1, 2) and m.cycle_consistent for m in result.matches)
    np.testing.assert_allclose(result.query_fg_prototype.vector, f0, atol=1e-12)
    np.testing.assert_allclose(result.query_bg_prototype.vector, g0, atol=1e-12)
    assert not result.fg_fallback and not result.bg_fallback


def test_random_3x3_against_exhaustive_oracle():
    rng = np.random.default_rng(4)
    for case in range(20):
        c = int(rng.integers(2, 7))
        feat_s = rng.normal(size=(c, 3, 3))
        feat_q = rng.normal(size=(c, 3, 3))
        mask = (rng.uniform(size=(3, 3)) > 0.5).astype(np.uint8)
        if mask.sum() in (0, mask.size):
            mask.flat[0] = 1 - mask.flat[0]
        result = cycle_match(feat_s, mask, feat_q)
        (fg_matches, fg_kept, fg_proto), (_, bg_kept, bg_proto) = \
            oracle_cycle_match(feat_s, mask, feat_q)
        assert len(result.matches) == len(fg_matches), f"case {case}"
        for got, want in zip(result.matches, fg_matches):
            assert got.i_s2q == want[0], f"case {case}"
            assert got.j_q2s == want[1], f"case {case}"
            assert got.cycle_consistent == want[2], f"case {case}"
        if fg_proto is not None:
            assert not result.fg_fallback
            np.testing.assert_allclose(result.query_fg_prototype.vector, fg_proto,
                                       atol=1e-12)
        else:
            assert result.fg_fallback
        if bg_proto is not None:
            assert not result.bg_fallback
            np.testing.assert_allclose(result.query_bg_prototype.vector, bg_proto,
                                       atol=1e-12)
        else:
            assert result.bg_fallback


def test_fallback_uses_support_prototype():
    # Query features anti-aligned with support foreground: every forward
    # match's backward step lands in the background, so nothing survives.
    c = 4
    support = np.zeros((c, 2, 2))
    mask = _grid_mask(2, 2, [(0, 0)])
    support[0, 0, 0] = 1.0       # fg direction e0
    support[1, 0, 1] = 1.0       # bg all e1
    support[1, 1, 0] = 1.0
    support[1, 1, 1] = 1.0
    query = np.zeros((c, 2, 2))
    query[1] = 1.0               # every query position aligned with bg only
    result = cycle_match(support, mask, query)
    assert result.fg_fallback
    want = masked_prototype(support, mask, "fg").vector
    np.testing.assert_allclose(result.query_fg_prototype.vector, want, atol=1e-12)
    assert result.query_fg_prototype.source == "query"


def test_tie_break_lowest_row_major_and_determinism():
    # All-equal features make every similarity tie; argmax must take index 0.
    feat = np.ones((3, 2, 2))
    mask = _grid_mask(2, 2, [(1, 1)])
    r1 = cycle_match(feat, mask, feat)
    r2 = cycle_match(feat, mask, feat)
    assert r1.matches[0].i_s2q == (0, 0)
    assert r1.matches == r2.matches
    assert np.array_equal(r1.query_fg_prototype.vector, r2.query_fg_prototype.vector)


def test_full_resolution_mask_downsampled_internally():
    rng = np.random.default_rng(5)
    feat = rng.normal(size=(4, 4, 4))
    full = np.zeros((16, 16), dtype=np.uint8)
    full[0:4, 0:4] = 1  # maps to feature cell (0, 0) under nearest downsample
    grid = _grid_mask(4, 4, [(0, 0)])
    a = cycle_match(feat, full, feat + 0.1 * rng.normal(size=feat.shape))
    rng2 = np.random.default_rng(5)
    feat2 = rng2.normal(size=(4, 4, 4))
    b = cycle_match(feat2, grid, feat2 + 0.1 * rng2.normal(size=feat2.shape))
    assert a.matches == b.matches


def test_degenerate_masks_raise():
    feat = np.random.default_rng(6).normal(size=(3, 3, 3))
    with pytest.raises(DegenerateMask):
        cycle_match(feat, np.zeros((3, 3), dtype=np.uint8), feat)
    with pytest.raises(DegenerateMask):
        cycle_match(feat, np.ones((3, 3), dtype=np.uint8), feat)
    with pytest.raises(ValueError):
        cycle_match(feat, np.ones((3, 3), dtype=np.uint8), feat[:2])


def test_result_unpacks_as_triple():
    rng = np.random.default_rng(7)
    feat = rng.normal(size=(3, 3, 3))
    mask = _grid_mask(3, 3, [(0, 0), (2, 2)])
    result = cycle_match(feat, mask, feat)
    assert isinstance(result, CycleMatchResult)
    fg, bg, matches = result
    assert fg.kind == "foreground" and bg.kind == "background"
    assert matches is result.matches


# ---------------------------------------------------------------------------
# solve_transform / apply_transform


def test_identity_prototypes_give_anchor_transpose():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(4, 4))
    t = solve_transform(np.eye(4), a)
    np.testing.assert_allclose(t.W, a.T, atol=1e-12)


def test_zero_anchor_gives_zero_transform():
    rng = np.random.default_rng(9)
    p = rng.normal(size=(4, 6))
    t = solve_transform(p, np.zeros((4, 6)))
    np.testing.assert_allclose(t.W, 0.0, atol=1e-12)


def test_full_rank_square_residual_and_direct_solve():
    rng = np.random.default_rng(10)
    for _ in range(10):
        p = rng.normal(size=(4, 4))
        a = rng.normal(size=(4, 4))
        t = solve_transform(p, a)
        assert t.residual <= 1e-8
        direct = np.linalg.solve(p.T.T, a).T  # P X = A then transpose
        np.testing.assert_allclose(t.W, direct, atol=1e-8)


def test_wide_full_row_rank_exact():
    rng = np.random.default_rng(11)
    p = rng.normal(size=(4, 16))
    a = rng.normal(size=(4, 16))
    t = solve_transform(p, a)
    assert t.residual <= 1e-8
    np.testing.assert_allclose(t.W, a.T @ np.linalg.pinv(p.T), atol=1e-8)


def test_rank_deficient_warns_minimum_norm():
    rng = np.random.default_rng(12)
    row = rng.normal(size=6)
    p = np.stack([row, 2 * row, rng.normal(size=6), rng.normal(size=6)])
    a = rng.normal(size=(4, 6))
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        t = solve_transform(p, a)
    np.testing.assert_allclose(t.W, (np.linalg.pinv(p) @ a).T, atol=1e-8)


def test_zero_row_rejected_and_shape_mismatch():
    with pytest.raises(ValueError):
        solve_transform(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        solve_transform(np.ones((2, 3)), np.ones((3, 3)))


def test_local_optimality_under_perturbation():
    rng = np.random.default_rng(13)
    for shape in ((4, 4), (4, 8), (6, 4)):
        p = rng.normal(size=shape)
        a = rng.normal(size=shape)
        t = solve_transform(p, a)
        base = t.residual
        for _ in range(20):
            delta = rng.normal(size=t.W.shape)
            delta *= 1e-3 / np.linalg.norm(delta)
            perturbed = np.linalg.norm((t.W + delta) @ p.T - a.T)
            assert perturbed >= base - 1e-12


def test_apply_transform_identity_zero_and_oracle():
    rng = np.random.default_rng(14)
    feats = rng.normal(size=(5, 3, 3))
    np.testing.assert_array_equal(apply_transform(np.eye(5), feats), feats)
    np.testing.assert_array_equal(apply_transform(np.zeros((5, 5)), feats),
                                  np.zeros_like(feats))
    w = rng.normal(size=(5, 5))
    single = rng.normal(size=(5, 1, 1))
    np.testing.assert_allclose(apply_transform(w, single)[:, 0, 0],
                               w @ single[:, 0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        apply_transform(np.eye(4), feats)


# ---------------------------------------------------------------------------
# dense prompts


def test_dense_prompt_shape_contract():
    net = DensePromptNet(image_size=32, out_size=32, out_channels=6, seed=0)
    z = net(np.random.default_rng(0).uniform(size=(32, 32, 3)))
    assert isinstance(z, DenseEmbedding)
    assert z.Z.shape == (6, 32, 32)
    assert DenseEmbedding.LOGIT_CHANNEL == 0


def test_dense_prompt_deterministic():
    net = DensePromptNet(image_size=32, out_size=32, out_channels=4, seed=1)
    img = np.random.default_rng(1).uniform(size=(32, 32, 3))
    np.testing.assert_array_equal(net(img).Z.data, net(img.copy()).Z.data)


def test_dense_prompt_rejects_bad_shapes():
    net = DensePromptNet(image_size=32, out_size=32, out_channels=4, seed=2)
    with pytest.raises(ValueError):
        net(np.zeros((16, 16, 3)))
    with pytest.raises(ValueError):
        DensePromptNet(image_size=64, out_size=48, out_channels=4)


def test_dense_prompt_single_sample_overfit():
    rng = np.random.default_rng(3)
    image = rng.uniform(size=(32, 32, 3))
    mask = np.zeros((32, 32))
    mask[8:24, 10:26] = 1.0
    image[mask.astype(bool)] = [0.9, 0.1, 0.1]  # make the target learnable
    net = DensePromptNet(image_size=32, out_size=32, out_channels=4, seed=3)
    opt = Adam(dict(net.named_parameters()), lr=1e-2)
    target = Tensor(mask)
    dice = 0.0
    for step in range(300):
        opt.zero_grad()
        z = net(image).Z
        logit = z[0]
        bce = (logit.softplus() - logit * target).mean()
        prob = logit.sigmoid()
        inter = (prob * target).sum()
        dice_loss = 1.0 - (2.0 * inter + 1e-6) / (prob.sum() + target.sum() + 1e-6)
        (bce + dice_loss).backward()
        opt.step()
        prob_now = 1.0 / (1.0 + np.exp(-z.data[0]))
        dice = 2.0 * (prob_now * mask).sum() / (prob_now.sum() + mask.sum())
        if dice >= 0.95:
            break
    assert dice >= 0.9, f"overfit dice only reached {dice:.3f}"


# ---------------------------------------------------------------------------
# CdtapModule


def _episode_features(rng, c=8, grid=4, shots=2, full=16):
    feats = [rng.normal(size=(c, grid, grid)) for _ in range(shots)]
    masks = []
    for _ in range(shots):
        m = np.zeros((full, full), dtype=np.uint8)
        r, cc = rng.integers(0, full - 6, size=2)
        m[r:r + 6, cc:cc + 6] = 1
        masks.append(m)
    query = rng.normal(size=(c, grid, grid))
    return feats, masks, query


def test_episode_prototypes_rows_normalized():
    rng = np.random.default_rng(20)
    module = CdtapModule(encoder_channels=8, image_size=32, mask_size=32,
                         mask_channels=4, seed=0)
    feats, masks, query = _episode_features(rng)
    p, flags = module.episode_prototypes(feats, masks, query)
    assert p.shape == (4, 8)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-6)
    assert set(flags) == {"fg_fallback", "bg_fallback"}


def test_support_shot_permutation_invariance():
    rng = np.random.default_rng(21)
    module = CdtapModule(encoder_channels=8, image_size=32, mask_size=32,
                         mask_channels=4, seed=0)
    feats, masks, query = _episode_features(rng, shots=5)
    p1, _ = module.episode_prototypes(feats, masks, query)
    order = [3, 1, 4, 0, 2]
    p2, _ = module.episode_prototypes([feats[i] for i in order],
                                      [masks[i] for i in order], query)
    assert np.abs(p1 - p2).max() <= 1e-6


def test_transform_tensor_matches_solver():
    rng = np.random.default_rng(22)
    module = CdtapModule(encoder_channels=8, image_size=32, mask_size=32,
                         mask_channels=4, seed=1)
    feats, masks, query = _episode_features(rng)
    p, _ = module.episode_prototypes(feats, masks, query)
    w_tensor = module.transform_tensor(p)
    reference = solve_transform(p, module.anchor.data)
    np.testing.assert_allclose(w_tensor.data, reference.W, atol=1e-8)
    assert reference.residual <= 1e-6  # 4 rows, full row rank in expectation


def test_transform_tensor_gradient_reaches_anchor():
    rng = np.random.default_rng(23)
    module = CdtapModule(encoder_channels=8, image_size=32, mask_size=32,
                         mask_channels=4, seed=2)
    feats, masks, query = _episode_features(rng)
    p, _ = module.episode_prototypes(feats, masks, query)
    w = module.transform_tensor(p)
    out = module.apply_transform_tensor(w, query)
    (out * out).sum().backward()
    assert module.anchor.grad is not None
    assert np.abs(module.anchor.grad).max() > 0


def test_apply_transform_tensor_matches_numpy_path():
    rng = np.random.default_rng(24)
    module = CdtapModule(encoder_channels=8, image_size=32, mask_size=32,
                         mask_channels=4, seed=3)
    feats, masks, query = _episode_features(rng)
    p, _ = module.episode_prototypes(feats, masks, query)
    w = module.transform_tensor(p)
    got = module.apply_transform_tensor(w, query).data
    want = apply_transform(w.data, query)
    np.testing.assert_allclose(got, want, atol=1e-10)
