"""Tests for mIoU, evaluation reports, and overlay rendering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from tavp.datasets import Dataset, DomainSpec, Episode, Sample, generate_synthetic_dataset
from tavp.evaluation import (
    OVERLAY_ALPHA,
    EvalReport,
    EvalRow,
    evaluate,
    evaluate_suite,
    miou,
    render_overlay,
)


def oracle_miou(pred, gt):
    """Per-pixel enumeration, no vector ops."""
    counts = {"fg": [0, 0], "bg": [0, 0]}  # [intersection, union]
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, g = bool(pred[i, j]), bool(gt[i, j])
            counts["fg"][0] += p and g
            counts["fg"][1] += p or g
            counts["bg"][0] += (not p) and (not g)
            counts["bg"][1] += (not p) or (not g)
    ious = [1.0 if u == 0 else inter / u for inter, u in counts.values()]
    return sum(ious) / 2.0


class OracleModel:
    """Returns the ground-truth query mask."""

    def predict_episode(self, episode):
        return episode.query.mask.astype(np.uint8)


class BackgroundModel:
    """Predicts all background."""

    def predict_episode(self, episode):
        return np.zeros_like(episode.query.mask, dtype=np.uint8)


def _dataset(domain_id="evaldom", seed=0, canvas=32):
    spec = DomainSpec(domain_id=domain_id, canvas_size=canvas, shape_family="ellipse")
    return generate_synthetic_dataset(spec, n_classes=3, n_per_class=6, seed=seed)


# ---------------------------------------------------------------- miou


def test_miou_hand_case_third():
    # 4x4: gt = left two columns (8 px), pred = top two rows (8 px).
    # fg: inter 4 (top-left 2x2), union 12 -> 1/3. bg mirrors it. mean = 1/3.
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[:, :2] = 1
    pred = np.zeros((4, 4), dtype=np.uint8)
    pred[:2, :] = 1
    assert abs(miou(pred, gt) - 1.0 / 3.0) <= 1e-12
    assert abs(oracle_miou(pred, gt) - 1.0 / 3.0) <= 1e-12


def test_miou_perfect():
    rng = np.random.default_rng(0)
    gt = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    assert miou(gt, gt) == 1.0


def test_miou_complement_zero():
    gt = np.zeros((6, 6), dtype=np.uint8)
    gt[:3] = 1
    assert miou(1 - gt, gt) == 0.0


def test_miou_both_empty_is_one():
    z = np.zeros((5, 5), dtype=np.uint8)
    assert miou(z, z) == 1.0
    assert miou(1 - z, 1 - z) == 1.0


def test_miou_shape_mismatch():
    with pytest.raises(ValueError):
        miou(np.zeros((4, 4)), np.zeros((4, 5)))


@st.composite
def mask_pairs(draw):
    h = draw(st.integers(1, 8))
    w = draw(st.integers(1, 8))
    bits = st.lists(st.integers(0, 1), min_size=h * w, max_size=h * w)
    pred = np.array(draw(bits), dtype=np.uint8).reshape(h, w)
    gt = np.array(draw(bits), dtype=np.uint8).reshape(h, w)
    return pred, gt


@settings(max_examples=60, deadline=None)
@given(mask_pairs())
def test_miou_matches_oracle_and_bounds(pair):
    pred, gt = pair
    val = miou(pred, gt)
    assert 0.0 <= val <= 1.0
    assert abs(val - oracle_miou(pred, gt)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(mask_pairs())
def test_miou_symmetric_in_arguments(pair):
    pred, gt = pair
    assert miou(pred, gt) == miou(gt, pred)


@settings(max_examples=40, deadline=None)
@given(mask_pairs())
def test_miou_label_swap_invariant(pair):
    pred, gt = pair
    assert miou(pred, gt) == miou(1 - pred, 1 - gt)


# ---------------------------------------------------------------- evaluate


def test_oracle_model_scores_one():
    report = evaluate(OracleModel(), _dataset(), shot=1, n_episodes=5, seed=3)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.domain == "evaldom"
    assert row.shot == 1
    assert row.episodes == 5
    assert row.miou == 1.0


def test_background_model_scores_below_one():
    # Synthetic episodes always have nonempty fg, so IoU_fg contributes 0.
    report = evaluate(BackgroundModel(), _dataset(), shot=1, n_episodes=4, seed=3)
    assert report.rows[0].miou < 1.0


def test_single_episode_report_equals_miou():
    from tavp.evaluation import episode_seed
    from tavp.datasets import sample_episode

    ds = _dataset()
    model = BackgroundModel()
    report = evaluate(model, ds, shot=1, n_episodes=1, seed=7)
    episode = sample_episode(ds, 1, episode_seed(7, ds.domain_id, 1, 0))
    expected = miou(model.predict_episode(episode), episode.query.mask)
    assert report.rows[0].miou == expected


def test_evaluate_rejects_zero_episodes():
    with pytest.raises(ValueError):
        evaluate(OracleModel(), _dataset(), shot=1, n_episodes=0, seed=0)


def test_evaluate_deterministic():
    ds = _dataset(seed=5)
    a = evaluate(BackgroundModel(), ds, shot=1, n_episodes=3, seed=11)
    b = evaluate(BackgroundModel(), ds, shot=1, n_episodes=3, seed=11)
    assert a.to_csv() == b.to_csv()


def test_suite_rows_match_standalone_runs():
    datasets = [_dataset("dom_a", seed=1), _dataset("dom_b", seed=2)]
    model = BackgroundModel()
    suite = evaluate_suite(model, datasets, shots=(1, 5), n_episodes=3, seed=9)
    assert len(suite.rows) == 4
    for ds in datasets:
        for shot in (1, 5):
            solo = evaluate(model, ds, shot=shot, n_episodes=3, seed=9)
            assert suite.row(ds.domain_id, shot).miou == solo.rows[0].miou


def test_suite_requires_datasets():
    with pytest.raises(ValueError):
        evaluate_suite(OracleModel(), [], shots=(1,), n_episodes=1, seed=0)


# ---------------------------------------------------------------- report


def _report():
    rows = [
        EvalRow("dom_a", 1, 0.25, 10),
        EvalRow("dom_b", 1, 0.75, 10),
        EvalRow("dom_a", 5, 0.5, 10),
        EvalRow("dom_b", 5, 1.0, 10),
    ]
    return EvalReport(rows=rows, seed=4, checkpoint_id="abc123")


def test_average_is_arithmetic_mean():
    report = _report()
    avgs = report.averages()
    assert abs(avgs[1] - 0.5) <= 1e-12
    assert abs(avgs[5] - 0.75) <= 1e-12


def test_csv_layout():
    lines = _report().to_csv().splitlines()
    assert lines[0] == "domain,shot,miou,episodes"
    assert lines[1] == "dom_a,1,0.25,10"
    assert lines[-2] == "average,1,0.5,20"
    assert lines[-1] == "average,5,0.75,20"


def test_csv_roundtrips_miou_exactly():
    # repr() formatting keeps the float bit pattern through the file.
    row = EvalRow("d", 1, 1.0 / 3.0, 2)
    report = EvalReport(rows=[row], seed=0, checkpoint_id="x")
    value = report.to_csv().splitlines()[1].split(",")[2]
    assert float(value) == 1.0 / 3.0


def test_text_table_mentions_metadata():
    text = _report().to_text()
    assert "seed=4" in text
    assert "checkpoint=abc123" in text
    assert "dom_a" in text and "average" in text
    # percent formatting: 0.75 -> 75.00
    assert "75.00" in text


def test_report_save(tmp_path):
    csv_path = tmp_path / "report.csv"
    txt_path = tmp_path / "report.txt"
    report = _report()
    report.save(csv_path, txt_path)
    assert csv_path.read_text() == report.to_csv()
    assert txt_path.read_text() == report.to_text()


def test_row_lookup_missing():
    with pytest.raises(KeyError):
        _report().row("nope", 1)


# ---------------------------------------------------------------- overlay


def _tiny_episode():
    h = 8
    rng = np.random.default_rng(0)
    image = rng.random((h, h, 3))
    support_mask = np.zeros((h, h), dtype=np.uint8)
    support_mask[1:3, 1:3] = 1
    query_mask = np.zeros((h, h), dtype=np.uint8)
    query_mask[4:7, 4:7] = 1
    support = Sample(image.copy(), support_mask, class_id=0, domain_id="d")
    query = Sample(rng.random((h, h, 3)), query_mask, class_id=0, domain_id="d")
    return Episode(support=[support], query=query, class_id=0)


def test_overlay_panel_grid(tmp_path):
    episode = _tiny_episode()
    pred = np.zeros_like(episode.query.mask)
    path = tmp_path / "overlay.png"
    render_overlay(episode, pred, path)
    with Image.open(path) as im:
        arr = np.asarray(im)
    h, w, _ = arr.shape
    assert h == 8
    assert w == 8 * (len(episode.support) + 1)


def test_overlay_pixel_readback(tmp_path):
    episode = _tiny_episode()
    pred = np.zeros_like(episode.query.mask)
    pred[4, 4] = 1  # overlaps gt at (4,4)
    path = tmp_path / "overlay.png"
    render_overlay(episode, pred, path)
    with Image.open(path) as im:
        arr = np.asarray(im)

    k = len(episode.support)
    a = OVERLAY_ALPHA
    green = np.array([0.0, 1.0, 0.0])
    blue = np.array([0.0, 0.0, 1.0])
    red = np.array([1.0, 0.0, 0.0])

    def to_u8(v):
        return np.clip(np.round(v * 255.0), 0, 255).astype(np.uint8)

    # gt-only query pixel (5,5): one green blend.
    px = episode.query.image[5, 5]
    assert np.array_equal(arr[5, 5 + 8 * k], to_u8((1 - a) * px + a * green))
    # gt-and-pred pixel (4,4): green blend then blue blend.
    px = episode.query.image[4, 4]
    blended = (1 - a) * ((1 - a) * px + a * green) + a * blue
    assert np.array_equal(arr[4, 4 + 8 * k], to_u8(blended))
    # support fg pixel (1,1): red blend on the first panel.
    px = episode.support[0].image[1, 1]
    assert np.array_equal(arr[1, 1], to_u8((1 - a) * px + a * red))
    # untouched pixel (0,0) of the query panel passes through.
    px = episode.query.image[0, 0]
    assert np.array_equal(arr[0, 0 + 8 * k], to_u8(px))


def test_overlay_empty_prediction_has_no_blue(tmp_path):
    episode = _tiny_episode()
    empty = np.zeros_like(episode.query.mask)
    path = tmp_path / "empty.png"
    render_overlay(episode, empty, path)
    with Image.open(path) as im:
        arr = np.asarray(im)

    # Expected canvas built without any blue blend step.
    a = OVERLAY_ALPHA
    panels = []
    for s in episode.support:
        panel = s.image.copy()
        m = s.mask.astype(bool)
        panel[m] = (1 - a) * panel[m] + a * np.array([1.0, 0.0, 0.0])
        panels.append(panel)
    q = episode.query.image.copy()
    m = episode.query.mask.astype(bool)
    q[m] = (1 - a) * q[m] + a * np.array([0.0, 1.0, 0.0])
    panels.append(q)
    expected = np.clip(np.round(np.concatenate(panels, axis=1) * 255.0), 0, 255)
    assert np.array_equal(arr, expected.astype(np.uint8))


def test_overlay_shape_mismatch():
    episode = _tiny_episode()
    with pytest.raises(ValueError):
        render_overlay(episode, np.zeros((4, 4), dtype=np.uint8), "unused.png")
