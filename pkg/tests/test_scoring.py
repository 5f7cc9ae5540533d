"""Anomaly scores, normalization, fusion, AUC, and report output."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tad.scoring import (PredictionBuffer, ScoreSeries, frame_auc, fuse_scores,
                         minmax_normalize, per_class_auc, plot_score_curve,
                         score_flow, write_scores_csv)


# ---------------------------------------------------------------------------
# flow-based score


def test_score_flow_zero_on_identical_fields():
    field = np.random.default_rng(0).normal(size=(2, 8, 8))
    assert score_flow(field, field.copy()) == 0.0


def test_score_flow_single_pixel_endpoint_distance():
    recon = np.zeros((2, 1, 1))
    target = np.array([[[3.0]], [[4.0]]])
    assert score_flow(recon, target) == 5.0


def test_score_flow_averages_over_pixels():
    recon = np.zeros((2, 1, 2))
    target = np.zeros((2, 1, 2))
    target[0, 0, 0] = 3.0
    target[1, 0, 0] = 4.0  # one pixel at distance 5, one at 0
    assert score_flow(recon, target) == 2.5


def test_score_flow_rejects_bad_shapes():
    with pytest.raises(ValueError, match="2,H,W"):
        score_flow(np.zeros((2, 4, 4)), np.zeros((2, 4, 8)))
    with pytest.raises(ValueError, match="2,H,W"):
        score_flow(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)))


# ---------------------------------------------------------------------------
# prediction spread score


def _push_constant(buf, t, obj_id, value, pred_len):
    buf.push(t, np.array([obj_id]), np.full((1, pred_len, 4), value))


def test_spread_hand_value():
    buf = PredictionBuffer(delta=2, pred_len=2)
    box = np.array([0.5, 0.5, 0.6, 0.6])
    r0 = np.array([[[0.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.6, 0.6]]])  # exact at step 1
    r1 = np.array([[[0.7, 0.5, 0.6, 0.6], [9.0, 9.0, 9.0, 9.0]]])  # 0.2 off at step 0
    buf.push(0, np.array([7]), r0)
    buf.push(1, np.array([7]), r1)
    # errors at t=2: {0, 0.2} on the first coordinate, {0, 0} elsewhere
    # population std per coordinate: [0.1, 0, 0, 0]; mean 0.025
    s_l, warm = buf.score(2, np.array([7]), box[None])
    assert not warm
    assert s_l == pytest.approx(0.025, abs=1e-12)


def test_spread_takes_max_over_objects():
    buf = PredictionBuffer(delta=2, pred_len=2)
    boxes = np.array([[0.5, 0.5, 0.6, 0.6], [0.0, 0.0, 0.0, 0.0]])
    r0 = np.stack([
        np.array([[0.0] * 4, [0.5, 0.5, 0.6, 0.6]]),   # object 1 exact at step 1
        np.array([[0.0] * 4, [0.0] * 4]),              # object 2 exact at step 1
    ])
    r1 = np.stack([
        np.array([[0.7, 0.5, 0.6, 0.6], [0.0] * 4]),   # object 1: 0.2 off
        np.array([[2.0, 0.0, 0.0, 0.0], [0.0] * 4]),   # object 2: 2.0 off
    ])
    ids = np.array([1, 2])
    buf.push(0, ids, r0)
    buf.push(1, ids, r1)
    s_l, warm = buf.score(2, ids, boxes)
    assert not warm
    # object 1 spreads 0.025, object 2 std {0, 2.0}/4 = 0.25; max wins
    assert s_l == pytest.approx(0.25, abs=1e-12)


def test_empty_buffer_is_warmup():
    buf = PredictionBuffer(delta=3, pred_len=5)
    s_l, warm = buf.score(0, np.array([1]), np.zeros((1, 4)))
    assert (s_l, warm) == (0.0, True)


def test_single_rollout_is_still_warmup():
    buf = PredictionBuffer(delta=3, pred_len=5)
    _push_constant(buf, 0, 1, 0.5, pred_len=5)
    s_l, warm = buf.score(1, np.array([1]), np.full((1, 4), 0.5))
    assert (s_l, warm) == (0.0, True)


def test_no_objects_is_warmup():
    buf = PredictionBuffer(delta=3, pred_len=5)
    s_l, warm = buf.score(4, np.array([], dtype=int), np.zeros((0, 4)))
    assert (s_l, warm) == (0.0, True)


def test_old_rollouts_are_evicted():
    buf = PredictionBuffer(delta=2, pred_len=5)
    _push_constant(buf, 0, 1, 9.0, pred_len=5)   # would dominate if kept
    _push_constant(buf, 1, 1, 0.1, pred_len=5)
    _push_constant(buf, 2, 1, 0.4, pred_len=5)   # deque holds only t=1,2 now
    s_l, warm = buf.score(3, np.array([1]), np.full((1, 4), 0.2))
    assert not warm
    # errors are |0.2-0.1| and |0.2-0.4|: std of {0.1, 0.2} is 0.05
    assert s_l == pytest.approx(0.05, abs=1e-12)


def test_stale_rollouts_outside_window_are_ignored():
    buf = PredictionBuffer(delta=2, pred_len=10)
    _push_constant(buf, 0, 1, 0.1, pred_len=10)
    _push_constant(buf, 1, 1, 0.3, pred_len=10)
    # at t=4 both rollouts are older than delta frames even though the
    # horizon still covers the frame
    s_l, warm = buf.score(4, np.array([1]), np.full((1, 4), 0.2))
    assert (s_l, warm) == (0.0, True)


def test_horizon_limits_usable_rollouts():
    short = PredictionBuffer(delta=5, pred_len=1)
    long = PredictionBuffer(delta=5, pred_len=2)
    for buf in (short, long):
        _push_constant(buf, 0, 1, 0.1, pred_len=buf.pred_len)
        _push_constant(buf, 1, 1, 0.5, pred_len=buf.pred_len)
    box = np.full((1, 4), 0.2)
    # pred_len=1 leaves only the t=1 rollout usable at t=2: warm-up
    assert short.score(2, np.array([1]), box) == (0.0, True)
    s_l, warm = long.score(2, np.array([1]), box)
    assert not warm
    # errors {0.1, 0.3}: population std 0.1 on every coordinate
    assert s_l == pytest.approx(0.1, abs=1e-12)


def test_unseen_object_is_skipped():
    buf = PredictionBuffer(delta=2, pred_len=2)
    _push_constant(buf, 0, 1, 0.1, pred_len=2)
    _push_constant(buf, 1, 1, 0.5, pred_len=2)
    ids = np.array([1, 99])
    boxes = np.array([[0.2] * 4, [0.9] * 4])
    s_l, warm = buf.score(2, ids, boxes)
    assert not warm
    # object 99 has no stored rollouts and contributes nothing
    assert s_l == pytest.approx(0.1, abs=1e-12)


def test_delta_must_be_positive():
    with pytest.raises(ValueError, match="delta"):
        PredictionBuffer(delta=0, pred_len=5)


# ---------------------------------------------------------------------------
# normalization and fusion


def test_minmax_linear_case():
    out = minmax_normalize(np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(out, np.array([0.0, 0.5, 1.0]))


def test_minmax_constant_series_maps_to_zero():
    assert np.array_equal(minmax_normalize(np.array([5.0, 5.0, 5.0])), np.zeros(3))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
@settings(max_examples=60, deadline=None)
def test_minmax_output_range(values):
    out = minmax_normalize(np.array(values))
    assert (out >= 0.0).all() and (out <= 1.0).all()
    if max(values) > min(values):
        assert out.min() == 0.0 and out.max() == 1.0


def test_fusion_hand_example():
    s_f = fuse_scores(np.array([0.0, 1.0]), np.array([1.0, 0.0]), alpha=0.4)
    assert np.allclose(s_f, [1.0, 0.0])


def test_fusion_pure_flow_weight_recovers_flow_ranking():
    rng = np.random.default_rng(1)
    s_e = rng.normal(size=20)
    s_l = rng.normal(size=20)
    assert np.allclose(fuse_scores(s_e, s_l, alpha=1.0), minmax_normalize(s_e))
    assert np.allclose(fuse_scores(s_e, s_l, alpha=0.0), minmax_normalize(s_l))


def test_fusion_invariant_to_affine_rescaling():
    rng = np.random.default_rng(2)
    s_e = rng.normal(size=30)
    s_l = rng.normal(size=30)
    base = fuse_scores(s_e, s_l, alpha=0.4)
    scaled = fuse_scores(3.0 * s_e + 10.0, 0.5 * s_l - 2.0, alpha=0.4)
    assert np.allclose(base, scaled, atol=1e-9)


def test_fusion_rejects_bad_alpha_and_lengths():
    with pytest.raises(ValueError, match="alpha"):
        fuse_scores(np.zeros(3), np.zeros(3), alpha=1.5)
    with pytest.raises(ValueError, match="mismatch"):
        fuse_scores(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# ranking AUC


def _brute_force_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = int((pos[:, None] > neg[None, :]).sum())
    ties = int((pos[:, None] == neg[None, :]).sum())
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def test_auc_perfect_separation():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    labels = np.array([0, 0, 1, 1])
    assert frame_auc(scores, labels) == 1.0


def test_auc_inverted_separation():
    scores = np.array([0.9, 0.8, 0.1, 0.2])
    labels = np.array([0, 0, 1, 1])
    assert frame_auc(scores, labels) == 0.0


def test_auc_all_ties_is_half():
    scores = np.ones(6)
    labels = np.array([0, 1, 0, 1, 0, 1])
    assert frame_auc(scores, labels) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError, match="class"):
        frame_auc(np.array([1.0, 2.0]), np.array([1, 1]))
    with pytest.raises(ValueError, match="mismatch"):
        frame_auc(np.array([1.0, 2.0]), np.array([1, 0, 1]))


def test_auc_matches_pairwise_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(4, 60))
        scores = rng.integers(0, 10, size=n).astype(np.float64)
        labels = np.zeros(n, dtype=int)
        labels[rng.choice(n, size=int(rng.integers(1, n)), replace=False)] = 1
        if labels.min() == labels.max():
            continue
        assert frame_auc(scores, labels) == _brute_force_auc(scores, labels)


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(4)
    scores = rng.integers(-5, 6, size=40).astype(np.float64)
    labels = (rng.random(40) < 0.4).astype(int)
    labels[0], labels[1] = 0, 1
    assert frame_auc(np.exp(scores), labels) == frame_auc(scores, labels)


# ---------------------------------------------------------------------------
# grouped AUC report


def test_single_bucket_matches_overall():
    rng = np.random.default_rng(5)
    scores = rng.random(30)
    labels = (rng.random(30) < 0.5).astype(int)
    labels[0], labels[1] = 0, 1
    categories = np.where(labels == 1, "ST", "normal")
    ego = np.zeros(30, dtype=bool)
    with pytest.warns(UserWarning, match="ego"):
        report = per_class_auc(scores, labels, categories, ego)
    assert report["buckets"] == {"ST/non_ego": report["overall"]}
    assert report["ego"] is None
    assert report["non_ego"] == report["overall"]


def test_two_buckets_recompute_by_hand():
    scores = np.array([0.1, 0.2, 0.9, 0.8, 0.3, 0.7])
    labels = np.array([0, 0, 1, 1, 0, 1])
    categories = np.array(["normal", "normal", "OO", "LA", "normal", "LA"])
    ego = np.array([False, False, True, False, False, False])
    report = per_class_auc(scores, labels, categories, ego)
    neg = labels == 0
    oo_mask = neg | ((labels == 1) & (categories == "OO"))
    la_mask = neg | ((labels == 1) & (categories == "LA"))
    assert report["buckets"]["OO/ego"] == frame_auc(scores[oo_mask], labels[oo_mask])
    assert report["buckets"]["LA/non_ego"] == frame_auc(scores[la_mask], labels[la_mask])
    assert set(report["buckets"]) == {"OO/ego", "LA/non_ego"}
    assert report["ego"] == frame_auc(scores[oo_mask], labels[oo_mask])
    assert report["non_ego"] == frame_auc(scores[la_mask], labels[la_mask])


# ---------------------------------------------------------------------------
# series container and outputs


def _series(n=6):
    frames = np.arange(n)
    return ScoreSeries(clip_id="clip_x", frames=frames,
                       s_e=np.linspace(0, 1, n), s_l=np.linspace(1, 0, n),
                       s_f=np.full(n, 0.5), labels=(frames >= n - 2).astype(int))


def test_score_series_validates_lengths():
    with pytest.raises(ValueError, match="s_l"):
        ScoreSeries("c", np.arange(4), np.zeros(4), np.zeros(3),
                    np.zeros(4), np.zeros(4, dtype=int))


def test_score_series_default_warm_mask():
    series = _series()
    assert series.warm.dtype == bool
    assert not series.warm.any()


def test_csv_round_trip(tmp_path):
    series = _series()
    path = tmp_path / "scores" / "clip_x.csv"
    write_scores_csv(path, series)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["frame", "s_e", "s_l", "s_f", "label"]
    assert len(rows) == 1 + len(series.frames)
    got = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows[1:]])
    assert np.allclose(got[:, 0], series.s_e, atol=1e-8)
    assert np.allclose(got[:, 1], series.s_l, atol=1e-8)
    assert [int(r[4]) for r in rows[1:]] == series.labels.tolist()


def test_plot_writes_png(tmp_path):
    series = _series()
    path = tmp_path / "plots" / "clip_x.png"
    plot_score_curve(series, path)
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000
