"""Resize helpers against independent per-pixel loop oracles."""

import numpy as np

from tavp.imageops import resize_bilinear, resize_nearest

RNG = np.random.default_rng(7)


def _loop_bilinear(arr, out_hw):
    h, w = arr.shape[:2]
    oh, ow = out_hw
    out = np.zeros((oh, ow) + arr.shape[2:])
    for i in range(oh):
        for j in range(ow):
            sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (arr[y0, x0] * (1 - fy) * (1 - fx) + arr[y0, x1] * (1 - fy) * fx
                         + arr[y1, x0] * fy * (1 - fx) + arr[y1, x1] * fy * fx)
    return out


def _loop_nearest(arr, out_hw):
    h, w = arr.shape[:2]
    oh, ow = out_hw
    out = np.zeros((oh, ow) + arr.shape[2:], dtype=arr.dtype)
    for i in range(oh):
        for j in range(ow):
            sy = int(np.clip(np.rint((i + 0.5) * h / oh - 0.5), 0, h - 1))
            sx = int(np.clip(np.rint((j + 0.5) * w / ow - 0.5), 0, w - 1))
            out[i, j] = arr[sy, sx]
    return out


def test_bilinear_matches_loop_oracle():
    for shape, target in [((8, 8), (4, 4)), ((7, 5), (3, 9)), ((6, 6, 3), (12, 12))]:
        arr = RNG.random(shape)
        got = resize_bilinear(arr, target)
        want = _loop_bilinear(arr, target)
        assert np.allclose(got, want, atol=1e-12)


def test_nearest_matches_loop_oracle():
    for shape, target in [((8, 8), (4, 4)), ((10, 6), (5, 5)), ((5, 5), (15, 15))]:
        arr = (RNG.random(shape) > 0.5).astype(np.uint8)
        got = resize_nearest(arr, target)
        want = _loop_nearest(arr, target)
        assert np.array_equal(got, want)


def test_identity_resize_is_exact():
    arr = RNG.random((9, 9, 3))
    assert np.array_equal(resize_bilinear(arr, (9, 9)), arr)
    m = (RNG.random((9, 9)) > 0.5).astype(np.uint8)
    assert np.array_equal(resize_nearest(m, (9, 9)), m)


def test_nearest_preserves_binarity():
    m = (RNG.random((31, 17)) > 0.3).astype(np.uint8)
    out = resize_nearest(m, (12, 40))
    assert set(np.unique(out)) <= {0, 1}
