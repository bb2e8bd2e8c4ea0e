"""Self-distillation objective with an EMA teacher, output centering, and a
desk-scale trainer that exercises the whole mechanism on synthetic clusters.

The loss for one (teacher view, student view) pair is d - n where
d = log sum_k exp(student_sm_k) and n = student_sm at the teacher's argmax
bin. The log-sum-exp deliberately runs over softmax outputs, not logits; that
reading is implemented verbatim and the closed-form tests pin it down.

Total loss averages over the 22 valid pairs of a view set: 2 teacher globals
against 12 student-side views, minus the 2 identity pairs (the globals appear
on both sides).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .embed import (
    EmbeddingIndex,
    EmbeddingVector,
    Scope,
    build_pool,
    sample_pair,
)
from .errors import (
    ConfigError,
    EmptyBatch,
    EmptyPool,
    InsufficientPool,
    NumericError,
    ShapeError,
)
from .store import atomic_write_text

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

GLOBAL_VIEWS = 2
LOCAL_CROPS = 4
POOL_VIEWS = 2
POOL_CROPS = 4


@dataclass(frozen=True)
class DistillConfig:
    """Training hyperparameters; momenta must be explicit in experiment files."""

    output_dim: int = 256
    teacher_temp: float = 0.04
    student_temp: float = 0.1
    teacher_momentum: float = 0.996
    center_momentum: float = 0.9
    learning_rate: float = 5e-4
    steps: int = 200
    seed: int = 30
    pool_scope: Scope = Scope.SAME_PROCEDURE
    hidden_dim: int = 32
    center_enabled: bool = True

    def __post_init__(self):
        if self.output_dim < 2:
            raise ConfigError("output_dim must be at least 2")
        if not 0 < self.teacher_temp <= self.student_temp:
            raise ConfigError("need 0 < teacher_temp <= student_temp")
        if not 0 < self.teacher_momentum <= 1:
            raise ConfigError("teacher_momentum must be in (0, 1]")
        if not 0 <= self.center_momentum <= 1:
            raise ConfigError("center_momentum must be in [0, 1]")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be positive")


_EXPERIMENT_KEYS = {
    "output_dim",
    "teacher_temp",
    "student_temp",
    "teacher_momentum",
    "center_momentum",
    "learning_rate",
    "steps",
    "seed",
    "pool_scope",
    "hidden_dim",
    "center_enabled",
}

_DATASET_KEYS = {"clusters", "videos_per_cluster", "frames_per_video", "input_dim"}


def load_experiment(path: Path | str) -> tuple[DistillConfig, dict]:
    """Parse an experiment TOML file into (config, dataset geometry).

    teacher_momentum and center_momentum carry no file-level defaults: a
    recorded run must state them. Unknown keys are rejected as typos.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    dataset = dict(raw.pop("dataset", {}))
    unknown = set(raw) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    unknown_ds = set(dataset) - _DATASET_KEYS
    if unknown_ds:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown_ds)}")
    for required in ("teacher_momentum", "center_momentum"):
        if required not in raw:
            raise ConfigError(f"experiment file must set {required} explicitly")
    if "pool_scope" in raw:
        raw["pool_scope"] = Scope(raw["pool_scope"])
    return DistillConfig(**raw), dataset


def tempered_softmax(
    logits: np.ndarray, temperature: float, center: np.ndarray | None = None
) -> np.ndarray:
    """Softmax of (logits - center) / temperature along the last axis.

    Stabilized by max-subtraction; the center argument is meant for teacher
    outputs only.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    if center is not None:
        center = np.asarray(center, dtype=np.float64)
        if center.shape != z.shape[-1:]:
            raise ShapeError(f"center shape {center.shape} vs logits {z.shape}")
        z = z - center
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_pair(teacher_sm: np.ndarray, student_sm: np.ndarray) -> float:
    """d - n for one view pair; see module docstring for the exact reading."""
    t = np.asarray(teacher_sm, dtype=np.float64)
    s = np.asarray(student_sm, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ShapeError(f"distribution shapes disagree: {t.shape} vs {s.shape}")
    d = math.log(float(np.exp(s).sum()))
    aligned_bin = int(np.argmax(t))  # ties resolve to the lowest index
    n = float(s[aligned_bin])
    return d - n


def grad_student(
    logits: np.ndarray, teacher_sm: np.ndarray, student_temp: float
) -> np.ndarray:
    """Analytic gradient of loss_pair(teacher_sm, softmax(logits/T)) in logits.

    With s the tempered student softmax, p the plain softmax of s, and e the
    one-hot at the teacher argmax: g = p - e, and the chain rule through the
    tempered softmax gives (1/T) * s * (g - <g, s>).
    """
    s = tempered_softmax(logits, student_temp)
    t = np.asarray(teacher_sm, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher shape {t.shape} vs student {s.shape}")
    exp_s = np.exp(s)
    p = exp_s / exp_s.sum()
    g = p.copy()
    g[int(np.argmax(t))] -= 1.0
    return s * (g - float(np.dot(g, s))) / student_temp


def ema_update(teacher: np.ndarray, student: np.ndarray, momentum: float) -> np.ndarray:
    """Elementwise momentum * teacher + (1 - momentum) * student."""
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher shape {t.shape} vs student {s.shape}")
    return momentum * t + (1.0 - momentum) * s


def center_update(
    center: np.ndarray, teacher_outputs: np.ndarray, momentum: float
) -> np.ndarray:
    """EMA of the batch-mean teacher output."""
    batch = np.asarray(teacher_outputs, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise EmptyBatch("center update needs a non-empty (batch, dim) array")
    c = np.asarray(center, dtype=np.float64)
    if c.shape != batch.shape[1:]:
        raise ShapeError(f"center shape {c.shape} vs outputs {batch.shape}")
    return momentum * c + (1.0 - momentum) * batch.mean(axis=0)


@dataclass(frozen=True)
class View:
    """One augmented image with an identity used for the u != v exclusion."""

    view_id: str
    pixels: np.ndarray


@dataclass(frozen=True)
class ViewSet:
    """Views for one anchor frame.

    teacher_views: the 2 globals. student_views: the same 2 globals (shared
    objects, same ids) plus 4 local crops of the anchor. pool_views: 2 pool
    frames plus 4 crops of those frames.
    """

    anchor: tuple[str, int]
    teacher_views: tuple[View, ...]
    student_views: tuple[View, ...]
    pool_views: tuple[View, ...]

    def __post_init__(self):
        if len(self.teacher_views) != GLOBAL_VIEWS:
            raise ValueError("expected exactly 2 teacher views")
        if len(self.student_views) != GLOBAL_VIEWS + LOCAL_CROPS:
            raise ValueError("expected exactly 6 student views")
        if len(self.pool_views) != POOL_VIEWS + POOL_CROPS:
            raise ValueError("expected exactly 6 pool views")
        shared = {v.view_id for v in self.teacher_views} & {
            v.view_id for v in self.student_views
        }
        if len(shared) != GLOBAL_VIEWS:
            raise ValueError("global views must be shared between teacher and student")

    def student_side(self) -> tuple[View, ...]:
        return self.student_views + self.pool_views


def loss_total(
    views: ViewSet,
    student_encoder: Callable[[np.ndarray], np.ndarray],
    teacher_encoder: Callable[[np.ndarray], np.ndarray],
    config: DistillConfig,
    center: np.ndarray | None = None,
) -> float:
    """Mean of loss_pair over all non-identity (teacher, student-side) pairs.

    The teacher encodes only its two globals; pairs reduce in a fixed
    (teacher order) x (student order) sweep so accumulation is reproducible.
    """
    teacher_sms = [
        tempered_softmax(teacher_encoder(u.pixels), config.teacher_temp, center)
        for u in views.teacher_views
    ]
    student_side = views.student_side()
    student_sms = [
        tempered_softmax(student_encoder(v.pixels), config.student_temp)
        for v in student_side
    ]
    total = 0.0
    pairs = 0
    for u, teacher_sm in zip(views.teacher_views, teacher_sms):
        for v, student_sm in zip(student_side, student_sms):
            if u.view_id == v.view_id:
                continue
            total += loss_pair(teacher_sm, student_sm)
            pairs += 1
    if pairs == 0:
        raise ValueError("view set produced no valid pairs")
    return total / pairs


@dataclass
class DenseNet:
    """Two dense layers with tanh; small enough to train full-batch in numpy."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def forward(self, x: np.ndarray) -> np.ndarray:
        hidden = np.tanh(x @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients for a batch given dLoss/dlogits rows."""
        pre = x @ self.w1.T + self.b1
        hidden = np.tanh(pre)
        grad_w2 = grad_out.T @ hidden
        grad_b2 = grad_out.sum(axis=0)
        grad_hidden = (grad_out @ self.w2) * (1.0 - hidden**2)
        grad_w1 = grad_hidden.T @ x
        grad_b1 = grad_hidden.sum(axis=0)
        return [grad_w1, grad_b1, grad_w2, grad_b2]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        self.w1, self.b1, self.w2, self.b2 = params


def init_network(
    input_dim: int, hidden_dim: int, output_dim: int, rng: np.random.Generator
) -> DenseNet:
    return DenseNet(
        w1=rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), size=(output_dim, hidden_dim)),
        b2=np.zeros(output_dim),
    )


@dataclass
class NetworkParams:
    """Student, its EMA teacher (never touched by gradients), and the center."""

    student: DenseNet
    teacher: DenseNet
    center: np.ndarray

    def __post_init__(self):
        for t, s in zip(self.teacher.params(), self.student.params()):
            if t.shape != s.shape:
                raise ShapeError("teacher and student shapes must match")


@dataclass(frozen=True)
class ToyFrame:
    video_id: str
    index: int
    procedure: str
    pixels: np.ndarray


@dataclass
class ToyDataset:
    frames: list[ToyFrame]
    input_dim: int

    def embedding_index(self) -> EmbeddingIndex:
        # The fixed extractor at desk scale is the identity on pixels.
        return EmbeddingIndex(
            EmbeddingVector(f.video_id, f.index, f.procedure, f.pixels)
            for f in self.frames
        )

    def pixels_of(self, video_id: str, index: int) -> np.ndarray:
        for f in self.frames:
            if f.video_id == video_id and f.index == index:
                return f.pixels
        raise KeyError((video_id, index))


def make_cluster_dataset(
    n_clusters: int = 3,
    videos_per_cluster: int = 4,
    frames_per_video: int = 6,
    input_dim: int = 64,
    seed: int = 30,
) -> ToyDataset:
    """Synthetic frames in well-separated clusters, one procedure per cluster."""
    rng = np.random.default_rng(seed)
    frames: list[ToyFrame] = []
    for c in range(n_clusters):
        center = rng.uniform(0.0, 1.0, size=input_dim) + 2.0 * c
        procedure = f"cluster{c}"
        for v in range(videos_per_cluster):
            offset = rng.normal(0.0, 0.05, size=input_dim)
            video_id = f"toy{c}{chr(ord('a') + v)}"
            for t in range(frames_per_video):
                noise = rng.normal(0.0, 0.02, size=input_dim)
                frames.append(
                    ToyFrame(video_id, t, procedure, center + offset + noise)
                )
    return ToyDataset(frames=frames, input_dim=input_dim)


def global_augment(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    scale = rng.uniform(0.9, 1.1)
    shift = rng.normal(0.0, 0.02)
    noise = rng.normal(0.0, 0.01, size=pixels.shape)
    return scale * pixels + shift + noise


def local_crop(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Contiguous window upsampled back to full length by repetition."""
    dim = pixels.shape[0]
    window = (dim + 1) // 2
    start = int(rng.integers(0, dim - window + 1))
    crop = pixels[start : start + window]
    stretched = np.repeat(crop, 2)[:dim]
    return stretched + rng.normal(0.0, 0.01, size=dim)


def build_view_corpus(
    dataset: ToyDataset,
    config: DistillConfig,
    rng: np.random.Generator,
) -> list[ViewSet]:
    """One ViewSet per anchor frame, built once so training is deterministic.

    Anchors whose pool cannot supply a pair are skipped; the first frame of a
    video measures its motion threshold against the succeeding frame.
    """
    index = dataset.embedding_index()
    by_video: dict[str, dict[int, ToyFrame]] = {}
    for f in dataset.frames:
        by_video.setdefault(f.video_id, {})[f.index] = f
    corpus: list[ViewSet] = []
    for frame in dataset.frames:
        neighbors = by_video[frame.video_id]
        prev_frame = neighbors.get(frame.index - 1) or neighbors.get(frame.index + 1)
        if prev_frame is None:
            continue
        anchor_vec = index.get(frame.video_id, frame.index)
        prev_vec = index.get(prev_frame.video_id, prev_frame.index)
        try:
            pool = build_pool(anchor_vec, prev_vec, index)
            slot_a, slot_b = sample_pair(pool, rng)
        except (EmptyPool, InsufficientPool):
            continue
        tag = f"{frame.video_id}/{frame.index}"
        globals_ = tuple(
            View(f"{tag}:g{i}", global_augment(frame.pixels, rng))
            for i in range(GLOBAL_VIEWS)
        )
        crops = tuple(
            View(f"{tag}:c{i}", local_crop(frame.pixels, rng))
            for i in range(LOCAL_CROPS)
        )
        pool_pixels = [
            dataset.pixels_of(slot_a.video_id, slot_a.index),
            dataset.pixels_of(slot_b.video_id, slot_b.index),
        ]
        pool_globals = tuple(
            View(f"{tag}:w{i}", global_augment(px, rng))
            for i, px in enumerate(pool_pixels)
        )
        pool_crops = tuple(
            View(f"{tag}:wc{i}", local_crop(pool_pixels[i % POOL_VIEWS], rng))
            for i in range(POOL_CROPS)
        )
        corpus.append(
            ViewSet(
                anchor=(frame.video_id, frame.index),
                teacher_views=globals_,
                student_views=globals_ + crops,
                pool_views=pool_globals + pool_crops,
            )
        )
    return corpus


@dataclass(frozen=True)
class TraceStep:
    step: int
    loss: float
    grad_norm: float


@dataclass
class TrainingTrace:
    entries: list[TraceStep]
    params: NetworkParams
    config: DistillConfig

    @property
    def initial_loss(self) -> float:
        return self.entries[0].loss

    @property
    def final_loss(self) -> float:
        return self.entries[-1].loss

    def save(self, path: Path | str) -> None:
        text = "".join(
            json.dumps({"step": e.step, "loss": e.loss, "grad_norm": e.grad_norm})
            + "\n"
            for e in self.entries
        )
        atomic_write_text(Path(path), text)


def toy_train(
    dataset: ToyDataset,
    config: DistillConfig,
    trace_path: Path | str | None = None,
) -> TrainingTrace:
    """Full-batch distillation over a fixed, seeded view corpus.

    Per step: encode teacher globals (with the current center), encode all
    student-side views, average loss over every valid pair, descend the
    student, EMA the teacher, then update the center from the teacher batch.
    The loss recorded at step k is evaluated before that step's update.
    """
    rng = np.random.default_rng(config.seed)
    student = init_network(dataset.input_dim, config.hidden_dim, config.output_dim, rng)
    teacher = copy.deepcopy(student)
    center = np.zeros(config.output_dim)
    corpus = build_view_corpus(dataset, config, rng)
    if not corpus:
        raise ValueError("view corpus is empty; dataset too small for pooling")

    # Flatten all views once; per-step work is then three batched matmuls.
    teacher_rows = []
    student_rows = []
    pair_map: list[tuple[int, int]] = []  # (teacher row, student row) per pair
    student_counts: list[int] = []
    for views in corpus:
        t_base = len(teacher_rows)
        s_base = len(student_rows)
        teacher_rows.extend(v.pixels for v in views.teacher_views)
        side = views.student_side()
        student_rows.extend(v.pixels for v in side)
        for ti, u in enumerate(views.teacher_views):
            for si, v in enumerate(side):
                if u.view_id == v.view_id:
                    continue
                pair_map.append((t_base + ti, s_base + si))
    teacher_batch = np.stack(teacher_rows)
    student_batch = np.stack(student_rows)
    pair_count = len(pair_map)

    entries: list[TraceStep] = []
    for step in range(config.steps):
        teacher_logits = teacher.forward(teacher_batch)
        teacher_sm = tempered_softmax(teacher_logits, config.teacher_temp, center)
        student_logits = student.forward(student_batch)

        total = 0.0
        grad_logits = np.zeros_like(student_logits)
        for t_row, s_row in pair_map:
            student_sm = tempered_softmax(student_logits[s_row], config.student_temp)
            total += loss_pair(teacher_sm[t_row], student_sm)
            grad_logits[s_row] += grad_student(
                student_logits[s_row], teacher_sm[t_row], config.student_temp
            )
        loss = total / pair_count
        grad_logits /= pair_count

        grads = student.backward(student_batch, grad_logits)
        grad_norm = math.sqrt(sum(float((g**2).sum()) for g in grads))
        if not (math.isfinite(loss) and math.isfinite(grad_norm)):
            raise NumericError(f"divergence at step {step}: loss={loss}")
        entries.append(TraceStep(step=step, loss=loss, grad_norm=grad_norm))

        if config.learning_rate != 0.0:
            for param, grad in zip(student.params(), grads):
                param -= config.learning_rate * grad
        teacher.set_params(
            [
                ema_update(t, s, config.teacher_momentum)
                for t, s in zip(teacher.params(), student.params())
            ]
        )
        if config.center_enabled:
            center = center_update(center, teacher_logits, config.center_momentum)

    trace = TrainingTrace(
        entries=entries,
        params=NetworkParams(student=student, teacher=teacher, center=center),
        config=config,
    )
    if trace_path is not None:
        trace.save(trace_path)
    return trace
