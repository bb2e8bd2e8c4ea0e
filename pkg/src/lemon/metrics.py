"""Evaluation metrics for phase recognition, multi-label classification, and
segmentation masks.

Conventions: accuracy, Jaccard, and F1 are percentages; average precision and
Dice are fractions in [0, 1]. Phase metrics assume 1 fps frame sequences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import MetricUndefined, ShapeError

RELAXED_WINDOW_S = 10


@dataclass(frozen=True)
class PhaseVideo:
    """Ground truth and predicted phase ids, one per 1-fps frame."""

    video_id: str
    gt: tuple[Hashable, ...]
    pred: tuple[Hashable, ...]

    def __post_init__(self):
        if len(self.gt) != len(self.pred):
            raise ShapeError(
                f"{self.video_id}: gt has {len(self.gt)} frames, pred {len(self.pred)}"
            )


def video_level_accuracy(videos: Sequence[PhaseVideo]) -> float:
    """Mean over videos of per-video frame accuracy, in percent.

    Every video counts equally regardless of length; empty videos are
    excluded (see accuracy_report for the flags).
    """
    return accuracy_report(videos)["video_level_accuracy"]


def frame_accuracy(videos: Sequence[PhaseVideo]) -> float:
    """Pooled accuracy over all frames of all videos, in percent."""
    return accuracy_report(videos)["frame_accuracy"]


def accuracy_report(videos: Sequence[PhaseVideo]) -> dict:
    per_video = []
    skipped = []
    correct = 0
    total = 0
    for video in videos:
        if not video.gt:
            skipped.append(video.video_id)
            continue
        hits = sum(1 for g, p in zip(video.gt, video.pred) if g == p)
        per_video.append(100.0 * hits / len(video.gt))
        correct += hits
        total += len(video.gt)
    if not per_video:
        raise MetricUndefined("no non-empty videos to evaluate")
    return {
        "video_level_accuracy": float(np.mean(per_video)),
        "frame_accuracy": 100.0 * correct / total,
        "per_video": per_video,
        "skipped_videos": skipped,
    }


def _classes_in(videos: Sequence[PhaseVideo]) -> list:
    seen = []
    for video in videos:
        for label in list(video.gt) + list(video.pred):
            if label not in seen:
                seen.append(label)
    return sorted(seen, key=repr)


def jaccard_video_class(
    videos: Sequence[PhaseVideo],
    vocabulary: Sequence[Hashable] | None = None,
) -> float:
    """Two-level Jaccard in percent: per (video, class), then per class across
    videos, then across classes."""
    return jaccard_report(videos, vocabulary)["jaccard"]


def jaccard_report(
    videos: Sequence[PhaseVideo],
    vocabulary: Sequence[Hashable] | None = None,
) -> dict:
    classes = list(vocabulary) if vocabulary is not None else _classes_in(videos)
    if not videos:
        raise MetricUndefined("no videos to evaluate")
    per_class: dict[Hashable, list[float]] = {c: [] for c in classes}
    for video in videos:
        gt = np.asarray(video.gt, dtype=object)
        pred = np.asarray(video.pred, dtype=object)
        for cls in classes:
            gt_set = gt == cls
            pred_set = pred == cls
            union = int(np.sum(gt_set | pred_set))
            if union == 0:
                continue  # class absent from this video entirely
            inter = int(np.sum(gt_set & pred_set))
            per_class[cls].append(inter / union)
    class_means = {c: float(np.mean(vals)) for c, vals in per_class.items() if vals}
    skipped = [c for c, vals in per_class.items() if not vals]
    if not class_means:
        raise MetricUndefined("no class present in any video")
    return {
        "jaccard": 100.0 * float(np.mean(list(class_means.values()))),
        "per_class": {repr(c): 100.0 * v for c, v in class_means.items()},
        "skipped_classes": [repr(c) for c in skipped],
    }


def relax_predictions(
    gt: Sequence[Hashable],
    pred: Sequence[Hashable],
    window_s: int = RELAXED_WINDOW_S,
) -> list:
    """Forgive boundary confusion near ground-truth transitions.

    For a transition between frames i-1 and i, frames i-window .. i+window-1
    whose prediction matches either adjacent phase are rewritten to ground
    truth; everything else is left for standard scoring.
    """
    relaxed = list(pred)
    n = len(gt)
    for i in range(1, n):
        if gt[i] == gt[i - 1]:
            continue
        adjacent = (gt[i - 1], gt[i])
        for j in range(max(0, i - window_s), min(n, i + window_s)):
            if relaxed[j] != gt[j] and pred[j] in adjacent:
                relaxed[j] = gt[j]
    return relaxed


def relaxed_phase_eval(
    videos: Sequence[PhaseVideo],
    window_s: int = RELAXED_WINDOW_S,
    vocabulary: Sequence[Hashable] | None = None,
) -> dict:
    """Strict and 10-second-relaxed accuracy and Jaccard, all in percent."""
    relaxed_videos = [
        PhaseVideo(
            v.video_id,
            v.gt,
            tuple(relax_predictions(v.gt, v.pred, window_s)),
        )
        for v in videos
    ]
    return {
        "accuracy": video_level_accuracy(relaxed_videos),
        "jaccard": jaccard_video_class(relaxed_videos, vocabulary),
        "strict_accuracy": video_level_accuracy(videos),
        "strict_jaccard": jaccard_video_class(videos, vocabulary),
    }


@dataclass(frozen=True)
class ScoredFrame:
    """Multi-label scores plus binary ground truth for one frame."""

    scores: tuple[float, ...]
    gt: tuple[int, ...]

    def __post_init__(self):
        if len(self.scores) != len(self.gt):
            raise ShapeError("scores and gt lengths disagree")
        if not all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if not all(g in (0, 1) for g in self.gt):
            raise ValueError("gt entries must be 0 or 1")


def average_precision(scores: Sequence[float], positives: Sequence[int]) -> float:
    """Non-interpolated rank-sum AP; ties keep stable input order."""
    n_pos = sum(positives)
    if n_pos == 0:
        raise MetricUndefined("average precision needs at least one positive")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if positives[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos


def mean_average_precision(frames: Sequence[ScoredFrame]) -> float:
    return map_report(frames)["map"]


def map_report(frames: Sequence[ScoredFrame]) -> dict:
    if not frames:
        raise MetricUndefined("no frames to evaluate")
    n_classes = len(frames[0].scores)
    per_class = {}
    skipped = []
    for cls in range(n_classes):
        scores = [f.scores[cls] for f in frames]
        positives = [f.gt[cls] for f in frames]
        if sum(positives) == 0:
            skipped.append(cls)
            continue
        per_class[cls] = average_precision(scores, positives)
    if not per_class:
        raise MetricUndefined("no class has a positive example")
    return {
        "map": float(np.mean(list(per_class.values()))),
        "per_class": per_class,
        "skipped_classes": skipped,
    }


def mean_dice(
    pred_masks: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray]
) -> float:
    """Dice per class pooled over all pixels of all masks, averaged over the
    classes present in ground truth; a fraction in [0, 1]."""
    if len(pred_masks) != len(gt_masks):
        raise ShapeError("pred and gt mask counts disagree")
    if not pred_masks:
        raise MetricUndefined("no masks to evaluate")
    preds = []
    gts = []
    for p, g in zip(pred_masks, gt_masks):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ShapeError(f"mask shapes disagree: {p.shape} vs {g.shape}")
        preds.append(p.ravel())
        gts.append(g.ravel())
    pred_all = np.concatenate(preds)
    gt_all = np.concatenate(gts)
    classes = np.unique(gt_all)
    dices = []
    for cls in classes:
        p_set = pred_all == cls
        g_set = gt_all == cls
        denom = int(p_set.sum()) + int(g_set.sum())
        dices.append(2.0 * int((p_set & g_set).sum()) / denom)
    return float(np.mean(dices))


def macro_f1(videos: Sequence[PhaseVideo]) -> float:
    """Macro-averaged F1 over classes, pooled frames, in percent."""
    gt_all = [g for v in videos for g in v.gt]
    pred_all = [p for v in videos for p in v.pred]
    if not gt_all:
        raise MetricUndefined("no frames to evaluate")
    classes = sorted(set(gt_all) | set(pred_all), key=repr)
    scores = []
    for cls in classes:
        tp = sum(1 for g, p in zip(gt_all, pred_all) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gt_all, pred_all) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gt_all, pred_all) if g == cls and p != cls)
        if tp == 0 and fp == 0 and fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return 100.0 * float(np.mean(scores))


def load_phase_predictions(rows: Sequence[Mapping]) -> list[PhaseVideo]:
    videos = []
    for row in rows:
        frames = row["frames"]
        videos.append(
            PhaseVideo(
                video_id=row["video_id"],
                gt=tuple(f["gt"] for f in frames),
                pred=tuple(f["pred"] for f in frames),
            )
        )
    return videos


def load_scored_frames(rows: Sequence[Mapping]) -> list[ScoredFrame]:
    frames = []
    for row in rows:
        for f in row["frames"]:
            frames.append(ScoredFrame(scores=tuple(f["scores"]), gt=tuple(f["gt"])))
    return frames


def evaluate(rows: Sequence[Mapping], metric: str = "all") -> dict:
    """Dispatch for the CLI: phase rows or scored rows, one report dict out."""
    first = rows[0]["frames"][0] if rows and rows[0].get("frames") else {}
    report: dict = {"metric": metric}
    if "scores" in first:
        frames = load_scored_frames(rows)
        report.update(map_report(frames))
        return report
    videos = load_phase_predictions(rows)
    if metric in ("video-accuracy", "all"):
        report.update(accuracy_report(videos))
    if metric in ("jaccard", "all"):
        report.update(jaccard_report(videos))
    if metric in ("relaxed", "all"):
        report["relaxed"] = relaxed_phase_eval(videos)
    return report
