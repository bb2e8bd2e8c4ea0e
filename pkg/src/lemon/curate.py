"""Intraoperative trimming, the 10% retention filter, and region obliteration.

All decision rules here are deliberately small, pure functions over per-second
labels so they can be checked exhaustively against brute-force references.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import httpx
import numpy as np

from .errors import NoSurgicalSpan, ServiceError


@dataclass(frozen=True)
class FrameScore:
    """Externally produced probability that a 1-fps frame shows surgery."""

    video_id: str
    index: int
    p_surgical: float

    def __post_init__(self):
        if not 0.0 <= self.p_surgical <= 1.0:
            raise ValueError(f"p_surgical {self.p_surgical} outside [0, 1]")


@dataclass(frozen=True)
class Box:
    """Detector box in pixel units, [x, y, w, h] with confidence."""

    x: float
    y: float
    w: float
    h: float
    conf: float

    @classmethod
    def from_list(cls, raw: Sequence[float]) -> "Box":
        if len(raw) != 5:
            raise ValueError(f"box needs 5 numbers, got {len(raw)}")
        return cls(*(float(v) for v in raw))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h, self.conf]


@dataclass(frozen=True)
class TrimWindow:
    """Inclusive [start, end] range of retained 1-fps indices."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad trim window [{self.start}, {self.end}]")

    def length(self) -> int:
        return self.end - self.start + 1

    def indices(self) -> range:
        return range(self.start, self.end + 1)


def binarize(scores: Sequence[float], theta: float = 0.5) -> list[bool]:
    """Score >= theta counts as surgical; the boundary is inclusive."""
    out = []
    for s in scores:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score {s} outside [0, 1]")
        out.append(s >= theta)
    return out


MIN_RUN = 3


def find_surgical_span(labels: Sequence[bool]) -> TrimWindow:
    """Trim to the first and last runs of >= 3 consecutive surgical frames.

    The window starts at the first frame of the first such run and ends at the
    last frame of the last such run. No qualifying run raises NoSurgicalSpan.
    """
    runs = []
    run_start = None
    for i, lab in enumerate(labels):
        if lab and run_start is None:
            run_start = i
        elif not lab and run_start is not None:
            if i - run_start >= MIN_RUN:
                runs.append((run_start, i - 1))
            run_start = None
    if run_start is not None and len(labels) - run_start >= MIN_RUN:
        runs.append((run_start, len(labels) - 1))
    if not runs:
        raise NoSurgicalSpan("no run of three or more consecutive surgical frames")
    return TrimWindow(start=runs[0][0], end=runs[-1][1])


def nonsurgical_fraction(labels: Sequence[bool], window: TrimWindow) -> float:
    if window.end >= len(labels):
        raise ValueError("trim window extends past the label sequence")
    total = window.length()
    nonsurgical = sum(1 for i in window.indices() if not labels[i])
    return nonsurgical / total


def accept_after_trim(
    labels: Sequence[bool],
    window: TrimWindow,
    max_nonsurgical: float = 0.10,
) -> tuple[bool, float]:
    """Reject when the non-surgical share inside the window strictly exceeds the cap.

    Exactly at the cap is accepted; the comparison is > with no epsilon.
    """
    fraction = nonsurgical_fraction(labels, window)
    return fraction <= max_nonsurgical, fraction


def drop_nonsurgical_frames(
    labels: Sequence[bool], window: TrimWindow
) -> tuple[list[int], list[int]]:
    """Split window indices into (kept surgical, excluded non-surgical)."""
    kept = [i for i in window.indices() if labels[i]]
    excluded = [i for i in window.indices() if not labels[i]]
    return kept, excluded


def obliterate_regions(
    image: np.ndarray,
    boxes: Iterable[Box],
    min_conf: float = 0.25,
) -> np.ndarray:
    """Return a copy with every confident box filled black.

    Boxes are clamped to the image; zero or negative area after clamping is a
    no-op. Applying the same boxes twice is idempotent by construction.
    """
    out = image.copy()
    height, width = out.shape[:2]
    for box in boxes:
        if box.conf < min_conf:
            continue
        x0 = max(0, int(round(box.x)))
        y0 = max(0, int(round(box.y)))
        x1 = min(width, int(round(box.x + box.w)))
        y1 = min(height, int(round(box.y + box.h)))
        if x1 > x0 and y1 > y0:
            out[y0:y1, x0:x1] = 0
    return out


def scores_by_video(rows: Iterable[Mapping]) -> dict[str, dict[int, float]]:
    """Group {video_id, index, p_surgical} rows; later rows win on duplicates."""
    table: dict[str, dict[int, float]] = {}
    for row in rows:
        score = FrameScore(row["video_id"], int(row["index"]), float(row["p_surgical"]))
        table.setdefault(score.video_id, {})[score.index] = score.p_surgical
    return table


def boxes_by_video(rows: Iterable[Mapping]) -> dict[str, dict[int, list[Box]]]:
    """Group {video_id, index, boxes: [[x,y,w,h,conf],...]} rows."""
    table: dict[str, dict[int, list[Box]]] = {}
    for row in rows:
        boxes = [Box.from_list(b) for b in row["boxes"]]
        table.setdefault(row["video_id"], {})[int(row["index"])] = boxes
    return table


class ScoringServiceClient:
    """HTTP client for an external frame scorer and redaction detector.

    Every call retries with exponential backoff; a service that stays
    unreachable raises ServiceError so the calling stage fails loudly instead
    of passing frames unscored.
    """

    def __init__(
        self,
        base_url: str,
        timeout_s: float = 10.0,
        retries: int = 3,
        backoff_s: float = 0.25,
        transport: httpx.BaseTransport | None = None,
    ):
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(
            base_url=base_url, timeout=timeout_s, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, image_bytes: bytes) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._client.post(
                    path,
                    content=image_bytes,
                    headers={"content-type": "application/octet-stream"},
                )
                response.raise_for_status()
                return response.json()
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ServiceError(f"scoring service unreachable via {path}: {last_error}")

    def score(self, image_bytes: bytes) -> float:
        payload = self._post("/score", image_bytes)
        value = float(payload["p_surgical"])
        if not 0.0 <= value <= 1.0:
            raise ServiceError(f"service returned p_surgical {value} outside [0, 1]")
        return value

    def detect(self, image_bytes: bytes) -> list[Box]:
        payload = self._post("/detect", image_bytes)
        return [Box.from_list(b) for b in payload["boxes"]]
