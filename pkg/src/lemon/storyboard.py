"""Key-frame selection and 4x4 collage composition for cheap video triage.

Selection is uniform temporal stratification over the 1-fps frames; the
collage letterboxes each tile so reviewers judge content, not distortion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .errors import NoFrames, NotFound
from .store import FrameRef, FrameStore, atomic_write_bytes, decode_image, encode_png

GRID = 4
TILE_COUNT = GRID * GRID


@dataclass(frozen=True)
class Storyboard:
    video_id: str
    keyframes: tuple[FrameRef, ...]
    collage: np.ndarray  # (4*tile_h, 4*tile_w, 3) uint8

    def __post_init__(self):
        if len(self.keyframes) != TILE_COUNT:
            raise ValueError(f"storyboard needs {TILE_COUNT} keyframes")


def select_keyframes(frames: Sequence[FrameRef], n: int = TILE_COUNT) -> list[FrameRef]:
    """Pick n frames: stride of floor(N/n) when N >= n, else pad with the last frame."""
    if not frames:
        raise NoFrames("cannot select keyframes from an empty frame list")
    total = len(frames)
    if total >= n:
        stride = total // n
        return [frames[j * stride] for j in range(n)]
    return list(frames) + [frames[-1]] * (n - total)


def letterbox(image: np.ndarray, tile_w: int, tile_h: int) -> np.ndarray:
    """Scale preserving aspect ratio, pad with black to exactly (tile_h, tile_w)."""
    h, w = image.shape[:2]
    scale = min(tile_w / w, tile_h / h)
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_AREA)
    canvas = np.zeros((tile_h, tile_w, 3), dtype=np.uint8)
    y0 = (tile_h - new_h) // 2
    x0 = (tile_w - new_w) // 2
    canvas[y0 : y0 + new_h, x0 : x0 + new_w] = resized
    return canvas


def compose_storyboard(
    keyframes: Sequence[FrameRef],
    store: FrameStore,
    tile_w: int = 320,
    tile_h: int = 180,
) -> Storyboard:
    """Lay 16 keyframes out row-major on a 4x4 grid; tile (r, c) holds keyframe 4r+c."""
    if len(keyframes) != TILE_COUNT:
        raise ValueError(f"expected {TILE_COUNT} keyframes, got {len(keyframes)}")
    collage = np.zeros((GRID * tile_h, GRID * tile_w, 3), dtype=np.uint8)
    video_id = keyframes[0].video_id
    for slot, ref in enumerate(keyframes):
        if ref.video_id != video_id:
            raise ValueError("storyboard keyframes must come from one video")
        data = store.get(ref.key())  # raises NotFound for unresolvable keys
        tile = letterbox(decode_image(data), tile_w, tile_h)
        r, c = divmod(slot, GRID)
        collage[r * tile_h : (r + 1) * tile_h, c * tile_w : (c + 1) * tile_w] = tile
    return Storyboard(video_id=video_id, keyframes=tuple(keyframes), collage=collage)


def storyboard_path(root: Path | str, video_id: str) -> Path:
    return Path(root) / f"{video_id}.png"


def save_storyboard(board: Storyboard, root: Path | str) -> Path:
    path = storyboard_path(root, board.video_id)
    atomic_write_bytes(path, encode_png(board.collage))
    return path


def load_storyboard_bytes(root: Path | str, video_id: str) -> bytes:
    path = storyboard_path(root, video_id)
    if not path.exists():
        raise NotFound(f"no storyboard for video {video_id}")
    return path.read_bytes()
