"""Domain model, manifest persistence, frame store, and 1-fps sampling.

The manifest is a JSON-lines file with one self-describing record per video.
Frames live in a plain directory tree, one PNG per sampled second, keyed as
``<video_id>/<00000000>``. Both are deliberately boring: streamable, diffable,
and safe to hand between worker processes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import cv2
import numpy as np

from .errors import (
    DuplicateVideo,
    FrameExists,
    IngestError,
    InvalidTransition,
    NoFrames,
    NotFound,
)

STAGES: tuple[str, ...] = (
    "ingested",
    "storyboarded",
    "video_verified",
    "trimmed",
    "filtered",
    "obliterated",
    "annotated",
    "exported",
)

PENDING = "pending"
PASSED = "passed"

_VIDEO_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,99}$")


@dataclass(frozen=True)
class Rejected:
    """Terminal stage state carrying the rejection reason."""

    reason: str


StageState = str | Rejected


def _state_to_json(state: StageState):
    if isinstance(state, Rejected):
        return {"rejected": state.reason}
    return state


def _state_from_json(raw) -> StageState:
    if isinstance(raw, str):
        if raw not in (PENDING, PASSED):
            raise ValueError(f"unknown stage state {raw!r}")
        return raw
    if isinstance(raw, dict) and set(raw) == {"rejected"}:
        return Rejected(str(raw["rejected"]))
    raise ValueError(f"unparseable stage state {raw!r}")


def initial_stage_status() -> dict[str, StageState]:
    status: dict[str, StageState] = {s: PENDING for s in STAGES}
    status["ingested"] = PASSED
    return status


def validate_stage_status(status: Mapping[str, StageState]) -> None:
    """Enforce the stage-map shape: passed*, then at most one rejection,
    then pending only. Unknown stage names are rejected outright."""
    unknown = set(status) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    blocked_by = None  # first non-passed stage, or the rejected stage
    for stage in STAGES:
        state = status.get(stage, PENDING)
        if blocked_by is not None and state != PENDING:
            raise InvalidTransition(
                f"stage {stage!r} is {state!r} but {blocked_by!r} is not passed"
            )
        if state != PASSED and blocked_by is None:
            blocked_by = stage


@dataclass(frozen=True)
class VideoRecord:
    """One video's identity, container metadata, and pipeline progress.

    Records are immutable values; stage changes go through :meth:`with_stage`
    which returns a new record and refuses non-monotone transitions.
    """

    video_id: str
    source: str
    title: str
    native_fps: float
    duration_s: float
    width: int
    height: int
    stage_status: Mapping[str, StageState] = field(default_factory=initial_stage_status)

    def __post_init__(self):
        if not _VIDEO_ID_RE.match(self.video_id):
            raise ValueError(f"invalid video_id {self.video_id!r}")
        if self.native_fps <= 0:
            raise ValueError("native_fps must be positive")
        if self.duration_s < 0:
            raise ValueError("duration_s must be non-negative")
        validate_stage_status(self.stage_status)

    def stage(self, name: str) -> StageState:
        return self.stage_status.get(name, PENDING)

    def with_stage(self, name: str, state: StageState) -> "VideoRecord":
        if name not in STAGES:
            raise InvalidTransition(f"unknown stage {name!r}")
        current = self.stage(name)
        if current == state:
            return self
        if current != PENDING:
            raise InvalidTransition(
                f"{self.video_id}: stage {name} is terminal ({current!r}), cannot set {state!r}"
            )
        if not (state == PASSED or isinstance(state, Rejected)):
            raise InvalidTransition(f"cannot move stage {name} from pending to {state!r}")
        status = dict(self.stage_status)
        status[name] = state
        validate_stage_status(status)
        return replace(self, stage_status=status)

    def rejected_anywhere(self) -> bool:
        return any(isinstance(s, Rejected) for s in self.stage_status.values())

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "source": self.source,
            "title": self.title,
            "native_fps": self.native_fps,
            "duration_s": self.duration_s,
            "width": self.width,
            "height": self.height,
            "stage_status": {k: _state_to_json(v) for k, v in self.stage_status.items()},
        }

    @classmethod
    def from_json(cls, raw: Mapping) -> "VideoRecord":
        return cls(
            video_id=raw["video_id"],
            source=raw["source"],
            title=raw["title"],
            native_fps=float(raw["native_fps"]),
            duration_s=float(raw["duration_s"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            stage_status={k: _state_from_json(v) for k, v in raw["stage_status"].items()},
        )

    def expected_frame_count(self) -> int:
        return math.ceil(self.duration_s)


@dataclass(frozen=True)
class FrameRef:
    """A sampled frame at a 0-based 1-fps position; timestamp is the index in seconds."""

    video_id: str
    index: int
    timestamp_s: float = field(init=False)

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be non-negative")
        object.__setattr__(self, "timestamp_s", float(self.index))

    def key(self) -> str:
        return frame_key(self.video_id, self.index)


def frame_key(video_id: str, index: int) -> str:
    if not _VIDEO_ID_RE.match(video_id):
        raise ValueError(f"invalid video_id {video_id!r}")
    if not 0 <= index < 10**8:
        raise ValueError(f"index {index} outside 8-digit key space")
    return f"{video_id}/{index:08d}"


def split_frame_key(key: str) -> tuple[str, int]:
    video_id, _, digits = key.partition("/")
    if not digits.isdigit() or len(digits) != 8:
        raise ValueError(f"malformed frame key {key!r}")
    return video_id, int(digits)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory so readers never see torn files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_jsonl(path: Path | str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: Path | str, rows: Iterable[Mapping]) -> None:
    text = "".join(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in rows)
    atomic_write_text(Path(path), text)


class FrameStore:
    """Write-once frame storage under ``<root>/<video_id>/<00000000>.png``.

    ``put`` is idempotent for identical bytes and refuses to silently replace
    differing content; that property is what makes whole-stage re-runs
    byte-identical.
    """

    def __init__(self, root: Path | str, extension: str = ".png"):
        self.root = Path(root)
        if not extension.startswith("."):
            raise ValueError("extension must start with '.'")
        self.extension = extension

    def path_for(self, key: str) -> Path:
        video_id, index = split_frame_key(key)
        return self.root / video_id / f"{index:08d}{self.extension}"

    def put(self, key: str, data: bytes) -> bool:
        """Store bytes under key. Returns True if a new file was written."""
        if not data:
            raise ValueError("refusing to store empty frame bytes")
        path = self.path_for(key)
        if path.exists():
            if path.read_bytes() == data:
                return False
            raise FrameExists(f"key {key} already holds different content")
        atomic_write_bytes(path, data)
        return True

    def get(self, key: str) -> bytes:
        path = self.path_for(key)
        if not path.exists():
            raise NotFound(f"frame key {key} not in store")
        return path.read_bytes()

    def exists(self, key: str) -> bool:
        return self.path_for(key).exists()

    def delete(self, key: str) -> None:
        # Only sampling cleanup uses this; the public contract stays write-once.
        path = self.path_for(key)
        if path.exists():
            path.unlink()

    def indices(self, video_id: str) -> list[int]:
        vdir = self.root / video_id
        if not vdir.is_dir():
            return []
        out = []
        for p in sorted(vdir.iterdir()):
            if p.suffix == self.extension and p.stem.isdigit():
                out.append(int(p.stem))
        return out

    def iter_video(self, video_id: str) -> Iterator[tuple[int, bytes]]:
        """Yield (index, bytes) in temporal order; lexicographic file order suffices."""
        for index in self.indices(video_id):
            yield index, self.get(frame_key(video_id, index))


def encode_png(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", image)
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def decode_image(data: bytes) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    image = cv2.imdecode(arr, cv2.IMREAD_COLOR)
    if image is None:
        raise ValueError("image decoding failed")
    return image


def probe_video(source: str | Path) -> dict:
    """Read container metadata. Raises IngestError for anything unreadable."""
    path = Path(source)
    if not path.is_file() or path.stat().st_size == 0:
        raise IngestError(f"source {source} is missing or empty")
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise IngestError(f"source {source} could not be opened")
        fps = cap.get(cv2.CAP_PROP_FPS)
        frame_count = int(round(cap.get(cv2.CAP_PROP_FRAME_COUNT)))
        width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    finally:
        cap.release()
    if fps <= 0 or frame_count <= 0:
        raise IngestError(f"source {source} reports no decodable frames")
    return {
        "native_fps": float(fps),
        "frame_count": frame_count,
        "duration_s": frame_count / float(fps),
        "width": width,
        "height": height,
    }


def derive_video_id(source: str) -> str:
    digest = hashlib.sha1(str(source).encode("utf-8")).hexdigest()[:12]
    return f"v{digest}"


def ingest_video(
    source: str | Path,
    metadata: Mapping,
    known_ids: Iterable[str] = (),
) -> VideoRecord:
    """Create a VideoRecord from a readable source; no frames are extracted yet."""
    if "title" not in metadata:
        raise IngestError("metadata must contain a title")
    video_id = str(metadata.get("video_id") or derive_video_id(str(source)))
    if video_id in set(known_ids):
        raise DuplicateVideo(f"video_id {video_id} already ingested")
    info = probe_video(source)
    return VideoRecord(
        video_id=video_id,
        source=str(source),
        title=str(metadata["title"]),
        native_fps=info["native_fps"],
        duration_s=info["duration_s"],
        width=info["width"],
        height=info["height"],
    )


def sampling_targets(duration_s: float, native_fps: float, frame_count: int) -> list[int]:
    """Native frame index for each integer second t: the temporally nearest frame."""
    count = math.ceil(duration_s)
    return [
        min(int(math.floor(t * native_fps + 0.5)), frame_count - 1)
        for t in range(count)
    ]


def sample_frames(record: VideoRecord, store: FrameStore) -> list[FrameRef]:
    """Decode the source sequentially and store one frame per integer second.

    Exactly ceil(duration_s) frames are produced. A decode failure before the
    last target discards everything written here and raises IngestError, so a
    rejected video never leaves partial frames behind.
    """
    info = probe_video(record.source)
    targets = sampling_targets(record.duration_s, info["native_fps"], info["frame_count"])
    if not targets:
        raise NoFrames(f"{record.video_id}: zero-length video")
    refs = [FrameRef(record.video_id, t) for t in range(len(targets))]

    if all(store.exists(ref.key()) for ref in refs):
        return refs

    cap = cv2.VideoCapture(record.source)
    written: list[str] = []
    try:
        if not cap.isOpened():
            raise IngestError(f"{record.video_id}: source could not be reopened")
        wanted = {}
        for second, native_index in enumerate(targets):
            wanted.setdefault(native_index, []).append(second)
        native_index = -1
        remaining = len(targets)
        while remaining > 0:
            ok, frame = cap.read()
            if not ok:
                raise IngestError(
                    f"{record.video_id}: decode failed at native frame {native_index + 1}"
                )
            native_index += 1
            for second in wanted.get(native_index, ()):
                key = refs[second].key()
                if store.put(key, encode_png(frame)):
                    written.append(key)
                remaining -= 1
        return refs
    except Exception:
        for key in written:
            store.delete(key)
        raise
    finally:
        cap.release()


class Manifest:
    """In-memory view of manifest.jsonl with serialized mutation."""

    def __init__(self, records: Iterable[VideoRecord] = ()):
        self._records: dict[str, VideoRecord] = {}
        self._lock = threading.RLock()
        for record in records:
            self.add(record)

    def add(self, record: VideoRecord) -> None:
        with self._lock:
            if record.video_id in self._records:
                raise DuplicateVideo(f"video_id {record.video_id} already in manifest")
            self._records[record.video_id] = record

    def get(self, video_id: str) -> VideoRecord:
        with self._lock:
            try:
                return self._records[video_id]
            except KeyError:
                raise NotFound(f"video {video_id} not in manifest") from None

    def __contains__(self, video_id: str) -> bool:
        with self._lock:
            return video_id in self._records

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def videos(self) -> list[VideoRecord]:
        with self._lock:
            return list(self._records.values())

    def update_stage(self, video_id: str, stage: str, state: StageState) -> VideoRecord:
        with self._lock:
            updated = self.get(video_id).with_stage(stage, state)
            self._records[video_id] = updated
            return updated

    def replace_record(self, record: VideoRecord) -> None:
        with self._lock:
            if record.video_id not in self._records:
                raise NotFound(f"video {record.video_id} not in manifest")
            self._records[record.video_id] = record

    def __eq__(self, other) -> bool:
        if not isinstance(other, Manifest):
            return NotImplemented
        return self._records == other._records

    def save(self, path: Path | str) -> None:
        with self._lock:
            rows = [r.to_json() for r in self._records.values()]
        write_jsonl(path, rows)

    @classmethod
    def load(cls, path: Path | str) -> "Manifest":
        manifest = cls()
        if Path(path).exists():
            for row in read_jsonl(path):
                manifest.add(VideoRecord.from_json(row))
        return manifest
