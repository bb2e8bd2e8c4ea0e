"""Embedding-space machinery: exact cosine k-NN, the motion-scaled
augmentation pool, typicality weighting, and the aggregated video embedding
with its linear classification head.

Everything here is exact and deterministic: nearest neighbors come from a
full scan, ties break on (video_id, index), and all randomness is injected
through explicit generators.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyPool,
    InsufficientPool,
    NoNeighbors,
    NotFound,
    ShapeError,
    ZeroVector,
)
from .store import FrameRef

TYPICALITY_FLOOR = 1e-12
WEIGHT_EPS = 1e-8
POOL_CAPACITY = 4
POOL_DISTANCE_FACTOR = 3.0
DEFAULT_NEIGHBORS = 20


class Scope(str, Enum):
    """Which index rows a query may see.

    ALL excludes only the query row itself; CROSS_VIDEO excludes the query's
    video; SAME_PROCEDURE additionally requires the query's procedure tag and
    is always cross-video; SAME_VIDEO restricts to the query's video.
    """

    ALL = "all"
    CROSS_VIDEO = "cross_video"
    SAME_PROCEDURE = "same_procedure"
    SAME_VIDEO = "same_video"


@dataclass(frozen=True)
class EmbeddingVector:
    """One frame's feature vector plus the identity needed for retrieval."""

    video_id: str
    index: int
    procedure: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"embedding must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite entries")
        if float(np.linalg.norm(arr)) == 0.0:
            raise ZeroVector(f"zero embedding for {self.video_id}/{self.index}")
        object.__setattr__(self, "values", arr)

    def frame_ref(self) -> FrameRef:
        return FrameRef(self.video_id, self.index)

    def sort_key(self) -> tuple[str, int]:
        return (self.video_id, self.index)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 minus cosine similarity, clamped into [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    d = 1.0 - float(np.dot(a, b)) / (norm_a * norm_b)
    return min(max(d, 0.0), 2.0)


class EmbeddingIndex:
    """Immutable collection of frame embeddings supporting scoped exact k-NN."""

    def __init__(self, vectors: Iterable[EmbeddingVector]):
        items = sorted(vectors, key=EmbeddingVector.sort_key)
        if not items:
            raise ValueError("index needs at least one vector")
        dims = {v.values.shape[0] for v in items}
        if len(dims) != 1:
            raise ShapeError(f"mixed embedding dimensions in index: {sorted(dims)}")
        self.dim = dims.pop()
        self.items: tuple[EmbeddingVector, ...] = tuple(items)
        self._matrix = np.stack([v.values for v in items])
        norms = np.linalg.norm(self._matrix, axis=1, keepdims=True)
        self._unit = self._matrix / norms
        self._video_ids = np.array([v.video_id for v in items])
        self._indices = np.array([v.index for v in items], dtype=np.int64)
        self._procedures = np.array([v.procedure for v in items])
        self._by_key = {(v.video_id, v.index): v for v in items}

    def __len__(self) -> int:
        return len(self.items)

    def get(self, video_id: str, index: int) -> EmbeddingVector:
        try:
            return self._by_key[(video_id, index)]
        except KeyError:
            raise NotFound(f"no embedding for {video_id}/{index}") from None

    def has(self, video_id: str, index: int) -> bool:
        return (video_id, index) in self._by_key

    def _eligible_mask(self, query: EmbeddingVector, scope: Scope) -> np.ndarray:
        mask = ~(
            (self._video_ids == query.video_id) & (self._indices == query.index)
        )
        if scope is Scope.CROSS_VIDEO:
            mask &= self._video_ids != query.video_id
        elif scope is Scope.SAME_PROCEDURE:
            mask &= self._video_ids != query.video_id
            mask &= self._procedures == query.procedure
        elif scope is Scope.SAME_VIDEO:
            mask &= self._video_ids == query.video_id
        return mask

    def distances_from(self, query: EmbeddingVector) -> np.ndarray:
        q = query.values / np.linalg.norm(query.values)
        d = 1.0 - self._unit @ q
        return np.clip(d, 0.0, 2.0)


@dataclass(frozen=True)
class Neighbor:
    distance: float
    vector: EmbeddingVector


@dataclass(frozen=True)
class KnnResult:
    neighbors: tuple[Neighbor, ...]
    shortfall: bool  # true when fewer than K eligible rows existed

    def distances(self) -> list[float]:
        return [n.distance for n in self.neighbors]


def knn(index: EmbeddingIndex, query: EmbeddingVector, k: int, scope: Scope) -> KnnResult:
    """Exact k nearest by cosine distance, ties broken by (video_id, index).

    With fewer than k eligible rows, all of them come back and the result is
    flagged as a shortfall instead of raising.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    mask = index._eligible_mask(query, scope)
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        return KnnResult((), True)
    d = index.distances_from(query)[candidates]
    vids = index._video_ids[candidates]
    idxs = index._indices[candidates]
    # lexsort sorts by last key first: distance, then video_id, then index.
    order = np.lexsort((idxs, vids, d))
    chosen = candidates[order[:k]]
    chosen_d = d[order[:k]]
    neighbors = tuple(
        Neighbor(float(dist), index.items[row]) for dist, row in zip(chosen_d, chosen)
    )
    return KnnResult(neighbors, shortfall=candidates.size < k)


def typicality(
    query: EmbeddingVector,
    index: EmbeddingIndex,
    k: int = DEFAULT_NEIGHBORS,
    *,
    scope: Scope,
) -> float:
    """Inverse mean cosine distance to the k nearest neighbors.

    The mean is clamped below by 1e-12 before inversion so duplicate frames
    produce a huge-but-finite typicality instead of dividing by zero.
    """
    result = knn(index, query, k, scope)
    if not result.neighbors:
        raise NoNeighbors(f"no eligible neighbors for {query.video_id}/{query.index}")
    mean_d = float(np.mean(result.distances()))
    return 1.0 / max(mean_d, TYPICALITY_FLOOR)


@dataclass(frozen=True)
class VideoEmbedding:
    """Typicality-weighted aggregate of a video's frame embeddings."""

    video_id: str
    values: np.ndarray
    weights: np.ndarray
    typicalities: np.ndarray
    flagged: tuple[int, ...] = ()  # frame positions that had no neighbors


def video_embedding(
    frames: Sequence[EmbeddingVector],
    index: EmbeddingIndex,
    eps: float = WEIGHT_EPS,
    *,
    scope: Scope,
    k: int = DEFAULT_NEIGHBORS,
) -> VideoEmbedding:
    """Aggregate frames as sum of w_j * frame_j with w_j = t_j / (eps + sum t).

    A frame with no eligible neighbors contributes typicality 0 and is listed
    in ``flagged`` rather than failing the whole video.
    """
    if not frames:
        raise ValueError("video_embedding needs at least one frame")
    video_id = frames[0].video_id
    typ = np.zeros(len(frames), dtype=np.float64)
    flagged = []
    for j, frame in enumerate(frames):
        try:
            typ[j] = typicality(frame, index, k, scope=scope)
        except NoNeighbors:
            flagged.append(j)
    weights = typ / (eps + typ.sum())
    stacked = np.stack([f.values for f in frames])
    values = weights @ stacked
    return VideoEmbedding(
        video_id=video_id,
        values=values,
        weights=weights,
        typicalities=typ,
        flagged=tuple(flagged),
    )


@dataclass(frozen=True)
class PoolSlot:
    video_id: str
    index: int
    kind: str  # "neighbor" | "adjacent"
    distance: float | None = None


@dataclass(frozen=True)
class AugmentationPool:
    """Up to four candidate frames: close same-procedure neighbors first,
    then frames adjacent to the anchor."""

    anchor: tuple[str, int]
    threshold: float
    slots: tuple[PoolSlot, ...]

    def __len__(self) -> int:
        return len(self.slots)


def build_pool(
    anchor: EmbeddingVector,
    prev: EmbeddingVector,
    index: EmbeddingIndex,
) -> AugmentationPool:
    """Fill up to 4 slots for the anchor frame.

    Threshold is 3x the anchor-to-prev distance. Cross-video same-procedure
    neighbors are admitted in ascending distance order while strictly inside
    the threshold; remaining slots take adjacent frames of the anchor in the
    order prev, next, prev-1, next+1, skipping ones that do not exist.
    """
    threshold = POOL_DISTANCE_FACTOR * cosine_distance(anchor.values, prev.values)
    slots: list[PoolSlot] = []
    for neighbor in knn(index, anchor, POOL_CAPACITY, Scope.SAME_PROCEDURE).neighbors:
        if not neighbor.distance < threshold:
            break
        slots.append(
            PoolSlot(
                video_id=neighbor.vector.video_id,
                index=neighbor.vector.index,
                kind="neighbor",
                distance=neighbor.distance,
            )
        )
    adjacent_order = (anchor.index - 1, anchor.index + 1, anchor.index - 2, anchor.index + 2)
    for adj in adjacent_order:
        if len(slots) >= POOL_CAPACITY:
            break
        if adj >= 0 and index.has(anchor.video_id, adj):
            slots.append(PoolSlot(video_id=anchor.video_id, index=adj, kind="adjacent"))
    if not slots:
        raise EmptyPool(f"no pool candidates for {anchor.video_id}/{anchor.index}")
    return AugmentationPool(
        anchor=(anchor.video_id, anchor.index),
        threshold=threshold,
        slots=tuple(slots),
    )


def sample_pair(pool: AugmentationPool, rng: np.random.Generator) -> tuple[PoolSlot, PoolSlot]:
    """Uniform unordered sample of two distinct slots."""
    if len(pool) < 2:
        raise InsufficientPool(f"pool has {len(pool)} slot(s), need 2")
    first, second = rng.choice(len(pool), size=2, replace=False)
    return pool.slots[int(first)], pool.slots[int(second)]


@dataclass(frozen=True)
class ClassifierHead:
    """Single affine layer over a video embedding."""

    weights: np.ndarray  # (n_classes, D)
    bias: np.ndarray  # (n_classes,)
    multi_label: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"head shapes disagree: {w.shape} vs {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


def classify_video(values: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Scores for one video embedding: softmax (single) or logistic (multi)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (head.weights.shape[1],):
        raise ShapeError(
            f"embedding dim {values.shape} does not match head {head.weights.shape}"
        )
    logits = head.weights @ values + head.bias
    if head.multi_label:
        return 1.0 / (1.0 + np.exp(-logits))
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def fit_classifier_head(
    embeddings: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    multi_label: bool = False,
    learning_rate: float = 0.5,
    steps: int = 300,
    seed: int = 0,
) -> ClassifierHead:
    """Full-batch gradient descent on cross-entropy; enough for desk-scale heads."""
    x = np.asarray(embeddings, dtype=np.float64)
    n, dim = x.shape
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(n_classes, dim))
    b = np.zeros(n_classes)
    if multi_label:
        y = np.asarray(labels, dtype=np.float64).reshape(n, n_classes)
    else:
        y = np.zeros((n, n_classes))
        y[np.arange(n), np.asarray(labels, dtype=int)] = 1.0
    for _ in range(steps):
        logits = x @ w.T + b
        if multi_label:
            probs = 1.0 / (1.0 + np.exp(-logits))
        else:
            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            probs = exp / exp.sum(axis=1, keepdims=True)
        grad_logits = (probs - y) / n
        w -= learning_rate * grad_logits.T @ x
        b -= learning_rate * grad_logits.sum(axis=0)
    return ClassifierHead(weights=w, bias=b, multi_label=multi_label)


MAGIC = b"LEMB"


def write_embeddings(path: Path | str, vectors: Sequence[EmbeddingVector]) -> None:
    """Binary layout: magic, D, count, then per record
    (video_id, frame index, procedure, D float32 values)."""
    path = Path(path)
    if path.suffix == ".jsonl":
        rows = [
            {
                "video_id": v.video_id,
                "index": v.index,
                "procedure": v.procedure,
                "values": [float(x) for x in v.values],
            }
            for v in vectors
        ]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows),
            encoding="utf-8",
        )
        return
    if not vectors:
        raise ValueError("refusing to write an empty embeddings file")
    dim = vectors[0].values.shape[0]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", dim, len(vectors)))
        for v in vectors:
            if v.values.shape[0] != dim:
                raise ShapeError("mixed dimensions in embeddings file")
            vid = v.video_id.encode("utf-8")
            proc = v.procedure.encode("utf-8")
            fh.write(struct.pack("<H", len(vid)))
            fh.write(vid)
            fh.write(struct.pack("<I", v.index))
            fh.write(struct.pack("<H", len(proc)))
            fh.write(proc)
            fh.write(np.asarray(v.values, dtype="<f4").tobytes())


def read_embeddings(path: Path | str) -> list[EmbeddingVector]:
    path = Path(path)
    if not path.exists():
        raise NotFound(f"embeddings file {path} does not exist")
    if path.suffix == ".jsonl":
        out = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                out.append(
                    EmbeddingVector(
                        video_id=row["video_id"],
                        index=int(row["index"]),
                        procedure=row.get("procedure", ""),
                        values=np.asarray(row["values"], dtype=np.float64),
                    )
                )
        return out
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not an embeddings file")
    dim, count = struct.unpack_from("<II", data, 4)
    offset = 12
    out = []
    for _ in range(count):
        (vid_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        video_id = data[offset : offset + vid_len].decode("utf-8")
        offset += vid_len
        (frame_index,) = struct.unpack_from("<I", data, offset)
        offset += 4
        (proc_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        procedure = data[offset : offset + proc_len].decode("utf-8")
        offset += proc_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(
            np.float64
        )
        offset += 4 * dim
        out.append(
            EmbeddingVector(
                video_id=video_id, index=frame_index, procedure=procedure, values=values
            )
        )
    return out
