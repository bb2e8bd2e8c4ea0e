"""Surgical video curation pipeline with human review gates.

The package turns a list of raw endoscopy recordings into a reviewed,
privacy-scrubbed frame dataset, and ships the numeric tooling used around
it: frame embeddings with typicality weighting, an augmentation-pool
sampler, a self-distillation training loop, and the evaluation metrics.
"""

from .errors import (
    DecisionConflict,
    DuplicateVideo,
    EmptyPool,
    IncompleteScores,
    IngestError,
    InsufficientPool,
    InvalidTransition,
    LemonError,
    MetricUndefined,
    NoNeighbors,
    NoSurgicalSpan,
    NotFound,
    StageOrderError,
)
from .store import (
    STAGES,
    FrameRef,
    FrameStore,
    Manifest,
    Rejected,
    VideoRecord,
    frame_key,
    ingest_video,
    sample_frames,
)
from .storyboard import Storyboard, compose_storyboard, select_keyframes
from .curate import (
    Box,
    FrameScore,
    TrimWindow,
    accept_after_trim,
    binarize,
    drop_nonsurgical_frames,
    find_surgical_span,
    obliterate_regions,
)
from .annotate import (
    BUILTIN_TABLE,
    KeywordTable,
    ProcedureLabel,
    apply_qc_decision,
    match_procedure,
    match_surgery_type,
    propose_label,
)
from .embed import (
    EmbeddingIndex,
    EmbeddingVector,
    Scope,
    build_pool,
    cosine_distance,
    knn,
    sample_pair,
    typicality,
    video_embedding,
)
from .distill import (
    DistillConfig,
    ViewSet,
    ema_update,
    center_update,
    grad_student,
    load_experiment,
    loss_pair,
    loss_total,
    tempered_softmax,
    toy_train,
)
from .metrics import (
    average_precision,
    evaluate,
    jaccard_report,
    macro_f1,
    mean_average_precision,
    mean_dice,
    relaxed_phase_eval,
    accuracy_report,
)
from .pipeline import Pipeline, PipelineConfig, ReviewTask
from .review_api import create_app

__all__ = [name for name in dir() if not name.startswith("_")]
