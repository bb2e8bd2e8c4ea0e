"""Metric definitions pinned by hand-computed witnesses and brute-force
oracles: accuracy variants, two-level Jaccard, boundary-relaxed scoring,
rank-sum average precision, pooled Dice, and macro F1."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lemon.errors import MetricUndefined, ShapeError
from lemon.metrics import (
    PhaseVideo,
    ScoredFrame,
    accuracy_report,
    average_precision,
    evaluate,
    frame_accuracy,
    jaccard_report,
    jaccard_video_class,
    load_phase_predictions,
    load_scored_frames,
    macro_f1,
    map_report,
    mean_average_precision,
    mean_dice,
    relax_predictions,
    relaxed_phase_eval,
    video_level_accuracy,
)

from oracles import (
    ap_oracle,
    dice_oracle,
    jaccard_two_level_oracle,
    video_accuracy_oracle,
)


def phase_video(video_id, gt, pred):
    return PhaseVideo(video_id=video_id, gt=tuple(gt), pred=tuple(pred))


def phase_set_strategy(max_videos=4, max_len=30, n_classes=4):
    label = st.integers(min_value=0, max_value=n_classes - 1)

    @st.composite
    def one_video(draw, idx):
        n = draw(st.integers(min_value=1, max_value=max_len))
        gt = draw(st.lists(label, min_size=n, max_size=n))
        pred = draw(st.lists(label, min_size=n, max_size=n))
        return phase_video(f"v{idx}", gt, pred)

    @st.composite
    def build(draw):
        count = draw(st.integers(min_value=1, max_value=max_videos))
        return [draw(one_video(i)) for i in range(count)]

    return build()


class TestPhaseVideo:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            phase_video("v1", ["a", "b"], ["a"])


class TestAccuracy:
    def test_perfect_predictions_score_100(self):
        videos = [phase_video("v1", "aabb", "aabb"), phase_video("v2", "ccc", "ccc")]
        assert video_level_accuracy(videos) == 100.0
        assert frame_accuracy(videos) == 100.0

    def test_video_mean_ignores_lengths(self):
        # 10-frame perfect video, 90-frame half-right video: the per-video
        # mean stays at 75 while the pooled rate lands at 55.
        long_gt = ["x"] * 90
        long_pred = ["x"] * 45 + ["y"] * 45
        videos = [
            phase_video("short", ["a"] * 10, ["a"] * 10),
            phase_video("long", long_gt, long_pred),
        ]
        assert video_level_accuracy(videos) == pytest.approx(75.0)
        assert frame_accuracy(videos) == pytest.approx(55.0)

    def test_empty_video_excluded_with_flag(self):
        videos = [phase_video("v1", "ab", "ab"), phase_video("empty", "", "")]
        report = accuracy_report(videos)
        assert report["skipped_videos"] == ["empty"]
        assert report["video_level_accuracy"] == 100.0

    def test_all_videos_empty_is_undefined(self):
        with pytest.raises(MetricUndefined):
            accuracy_report([phase_video("v1", "", "")])

    def test_video_order_is_irrelevant(self):
        videos = [
            phase_video("v1", "aab", "abb"),
            phase_video("v2", "cc", "cd"),
            phase_video("v3", "e", "e"),
        ]
        assert video_level_accuracy(videos) == video_level_accuracy(videos[::-1])

    @given(phase_set_strategy())
    @settings(max_examples=120)
    def test_matches_oracle(self, videos):
        pairs = [(list(v.gt), list(v.pred)) for v in videos]
        assert video_level_accuracy(videos) == pytest.approx(
            video_accuracy_oracle(pairs), abs=1e-9
        )

    @given(phase_set_strategy())
    @settings(max_examples=60)
    def test_relabeling_invariance(self, videos):
        renamed = [
            phase_video(v.video_id, [f"c{g}" for g in v.gt], [f"c{p}" for p in v.pred])
            for v in videos
        ]
        assert video_level_accuracy(renamed) == video_level_accuracy(videos)


class TestJaccard:
    def test_hand_computed_witness(self):
        # Single video, gt XXYY vs pred XYYY: class X overlaps 1 of 2,
        # class Y overlaps 2 of 3, so the mean is 7/12.
        videos = [phase_video("v1", "XXYY", "XYYY")]
        expected = 100.0 * (0.5 + 2.0 / 3.0) / 2.0
        assert expected == pytest.approx(58.3333333, abs=1e-4)
        assert jaccard_video_class(videos) == pytest.approx(expected, abs=1e-9)

    def test_averaging_order_is_class_then_mean(self):
        # v1 has only class X (scores 1.0); v2 scores X=0, Y=0.75.
        # Averaging per class first gives (0.5 + 0.75) / 2 = 62.5; the
        # other nesting would give 68.75, so this pins the order.
        videos = [
            phase_video("v1", "X", "X"),
            phase_video("v2", "XYYY", "YYYY"),
        ]
        assert jaccard_video_class(videos) == pytest.approx(62.5, abs=1e-9)

    def test_perfect_is_100(self):
        videos = [phase_video("v1", "XXY", "XXY"), phase_video("v2", "Z", "Z")]
        assert jaccard_video_class(videos) == 100.0

    def test_disjoint_classes_score_zero(self):
        assert jaccard_video_class([phase_video("v1", "XX", "YY")]) == 0.0

    def test_vocabulary_class_absent_everywhere_is_skipped(self):
        report = jaccard_report([phase_video("v1", "XX", "XX")], vocabulary=["X", "Z"])
        assert report["skipped_classes"] == [repr("Z")]
        assert report["jaccard"] == 100.0

    def test_no_videos_is_undefined(self):
        with pytest.raises(MetricUndefined):
            jaccard_report([])

    @given(phase_set_strategy(n_classes=3))
    @settings(max_examples=120)
    def test_matches_oracle(self, videos):
        pairs = [(list(v.gt), list(v.pred)) for v in videos]
        assert jaccard_video_class(videos) == pytest.approx(
            jaccard_two_level_oracle(pairs), abs=1e-9
        )

    @given(phase_set_strategy(n_classes=3))
    @settings(max_examples=60)
    def test_relabeling_invariance(self, videos):
        renamed = [
            phase_video(v.video_id, [f"c{g}" for g in v.gt], [f"c{p}" for p in v.pred])
            for v in videos
        ]
        assert jaccard_video_class(renamed) == pytest.approx(
            jaccard_video_class(videos), abs=1e-9
        )


class TestRelaxedBoundary:
    def test_lag_within_window_forgiven_entirely(self):
        gt = ["a"] * 20 + ["b"] * 20
        pred = ["a"] * 30 + ["b"] * 10  # transition predicted 10 frames late
        report = relaxed_phase_eval([phase_video("v1", gt, pred)])
        assert report["accuracy"] == 100.0
        assert report["strict_accuracy"] == pytest.approx(75.0)

    def test_lag_beyond_window_scored_strictly(self):
        gt = ["a"] * 20 + ["b"] * 20
        pred = ["a"] * 31 + ["b"] * 9  # 11-frame lag: one frame overflows
        report = relaxed_phase_eval([phase_video("v1", gt, pred)])
        assert report["accuracy"] == pytest.approx(100.0 * 39 / 40)

    def test_single_phase_video_unchanged(self):
        videos = [phase_video("v1", "aaaa", "aaba")]
        report = relaxed_phase_eval(videos)
        assert report["accuracy"] == report["strict_accuracy"]
        assert report["jaccard"] == report["strict_jaccard"]

    def test_non_adjacent_label_not_forgiven(self):
        gt = ["a", "a", "b", "b"]
        pred = ["a", "c", "b", "b"]  # c borders the transition but is alien
        assert relax_predictions(gt, pred) == pred

    def test_only_boundary_frames_rewritten(self):
        gt = ["a"] * 15 + ["b"] * 15
        pred = ["b"] * 30  # b is adjacent, but only near the transition
        relaxed = relax_predictions(gt, pred)
        assert relaxed[5:15] == ["a"] * 10
        assert relaxed[:5] == ["b"] * 5  # outside the 10-frame window

    @given(phase_set_strategy(n_classes=3))
    @settings(max_examples=120)
    def test_relaxed_never_below_strict(self, videos):
        report = relaxed_phase_eval(videos)
        assert report["accuracy"] >= report["strict_accuracy"] - 1e-12
        assert report["jaccard"] >= report["strict_jaccard"] - 1e-12


class TestAveragePrecision:
    def test_separated_pair_is_perfect(self):
        assert average_precision([0.9, 0.1], [1, 0]) == 1.0

    def test_reversed_pair_is_half(self):
        assert average_precision([0.1, 0.9], [1, 0]) == 0.5

    def test_ties_keep_input_order(self):
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5

    def test_no_positives_undefined(self):
        with pytest.raises(MetricUndefined):
            average_precision([0.3, 0.2], [0, 0])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.random(50).tolist()
        labels = (rng.random(50) < 0.3).astype(int).tolist()
        labels[0] = 1
        base = average_precision(scores, labels)
        warped = [math.exp(3.0 * s) - 0.5 for s in scores]
        assert average_precision(warped, labels) == pytest.approx(base, abs=1e-12)

    def test_matches_quadratic_oracle_on_random_sets(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            scores = rng.random(n).round(2).tolist()  # rounding forces ties
            labels = (rng.random(n) < 0.4).astype(int).tolist()
            if sum(labels) == 0:
                labels[int(rng.integers(0, n))] = 1
            assert average_precision(scores, labels) == pytest.approx(
                ap_oracle(labels, scores), abs=1e-9
            )


class TestMeanAveragePrecision:
    def test_scored_frame_validation(self):
        with pytest.raises(ShapeError):
            ScoredFrame(scores=(0.1,), gt=(0, 1))
        with pytest.raises(ValueError):
            ScoredFrame(scores=(float("nan"),), gt=(1,))
        with pytest.raises(ValueError):
            ScoredFrame(scores=(0.5,), gt=(2,))

    def test_positive_free_class_skipped(self):
        frames = [
            ScoredFrame(scores=(0.9, 0.4), gt=(1, 0)),
            ScoredFrame(scores=(0.1, 0.6), gt=(0, 0)),
        ]
        report = map_report(frames)
        assert report["skipped_classes"] == [1]
        assert report["map"] == 1.0

    def test_all_classes_empty_undefined(self):
        with pytest.raises(MetricUndefined):
            map_report([ScoredFrame(scores=(0.2,), gt=(0,))])
        with pytest.raises(MetricUndefined):
            map_report([])

    def test_matches_oracle_per_class_mean(self):
        rng = np.random.default_rng(23)
        n, k = 200, 5
        scores = rng.random((n, k)).round(2)
        gt = (rng.random((n, k)) < 0.25).astype(int)
        gt[0] = 1  # guarantee every class evaluable
        frames = [
            ScoredFrame(scores=tuple(scores[i]), gt=tuple(int(g) for g in gt[i]))
            for i in range(n)
        ]
        expected = np.mean(
            [ap_oracle(gt[:, c].tolist(), scores[:, c].tolist()) for c in range(k)]
        )
        assert mean_average_precision(frames) == pytest.approx(expected, abs=1e-9)


class TestMeanDice:
    def test_identical_masks(self):
        masks = [np.array([[0, 1], [2, 2]])]
        assert mean_dice(masks, masks) == 1.0

    def test_disjoint_masks(self):
        gt = [np.zeros((4, 4), dtype=int)]
        pred = [np.ones((4, 4), dtype=int)]
        assert mean_dice(pred, gt) == 0.0

    def test_half_overlap_equal_areas(self):
        # Class 1 occupies two columns in each mask, shifted by one: every
        # class overlaps half its area, so the mean lands exactly on 0.5.
        gt = np.zeros((4, 4), dtype=int)
        gt[:, 0:2] = 1
        pred = np.zeros((4, 4), dtype=int)
        pred[:, 1:3] = 1
        assert mean_dice([pred], [gt]) == pytest.approx(0.5)

    def test_classes_come_from_ground_truth(self):
        gt = [np.zeros((2, 2), dtype=int)]
        pred = [np.full((2, 2), 9, dtype=int)]  # 9 never enters the mean
        assert mean_dice(pred, gt) == 0.0

    def test_pixels_pool_across_masks(self):
        # One perfect mask and one empty-prediction mask: pooling gives
        # 2*4/(4+8) per class, not the 0.5 a per-mask average would give.
        gt = [np.ones((2, 2), dtype=int), np.ones((2, 2), dtype=int)]
        pred = [np.ones((2, 2), dtype=int), np.zeros((2, 2), dtype=int)]
        lone = mean_dice(pred, gt)
        assert lone == pytest.approx(2 * 4 / 12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            mean_dice([np.zeros((2, 2))], [np.zeros((2, 3))])
        with pytest.raises(ShapeError):
            mean_dice([np.zeros((2, 2))], [])
        with pytest.raises(MetricUndefined):
            mean_dice([], [])

    def test_matches_oracle_on_random_masks(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
            count = int(rng.integers(1, 4))
            gts = [rng.integers(0, 3, size=shape) for _ in range(count)]
            preds = [rng.integers(0, 3, size=shape) for _ in range(count)]
            assert mean_dice(preds, gts) == pytest.approx(
                dice_oracle(gts, preds), abs=1e-12
            )


class TestMacroF1:
    def test_perfect_is_100(self):
        assert macro_f1([phase_video("v1", "abc", "abc")]) == 100.0

    def test_hand_computed_case(self):
        # Class a: tp 1, fn 1; class b: tp 1, fp 1. Both F1 = 2/3.
        videos = [phase_video("v1", "aab", "abb")]
        assert macro_f1(videos) == pytest.approx(100.0 * 2.0 / 3.0)

    def test_empty_undefined(self):
        with pytest.raises(MetricUndefined):
            macro_f1([phase_video("v1", "", "")])


class TestLoadersAndDispatch:
    def test_phase_rows_round_trip(self):
        rows = [
            {
                "video_id": "v1",
                "frames": [{"gt": "a", "pred": "a"}, {"gt": "b", "pred": "a"}],
            }
        ]
        videos = load_phase_predictions(rows)
        assert videos[0].gt == ("a", "b")
        assert videos[0].pred == ("a", "a")

    def test_scored_rows_flatten(self):
        rows = [
            {"video_id": "v1", "frames": [{"scores": [0.9, 0.1], "gt": [1, 0]}]},
            {"video_id": "v2", "frames": [{"scores": [0.2, 0.8], "gt": [0, 1]}]},
        ]
        frames = load_scored_frames(rows)
        assert len(frames) == 2
        assert frames[1].scores == (0.2, 0.8)

    def test_evaluate_dispatches_on_row_shape(self):
        phase_rows = [
            {
                "video_id": "v1",
                "frames": [{"gt": "a", "pred": "a"}, {"gt": "a", "pred": "b"}],
            }
        ]
        report = evaluate(phase_rows, metric="all")
        assert report["video_level_accuracy"] == pytest.approx(50.0)
        assert "jaccard" in report
        assert report["relaxed"]["strict_accuracy"] == pytest.approx(50.0)

        only_jaccard = evaluate(phase_rows, metric="jaccard")
        assert "jaccard" in only_jaccard
        assert "video_level_accuracy" not in only_jaccard

        scored_rows = [
            {"video_id": "v1", "frames": [{"scores": [0.9], "gt": [1]}]}
        ]
        assert evaluate(scored_rows)["map"] == 1.0
