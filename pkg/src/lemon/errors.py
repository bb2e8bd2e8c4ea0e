"""Exception vocabulary shared across the package.

Every failure mode that callers are expected to branch on has a named class
here. Stage runners catch ``LemonError`` subclasses to record per-video
rejections without aborting a batch; anything else is a genuine bug and
propagates.
"""


class LemonError(Exception):
    """Base class for all domain errors raised by this package."""


class IngestError(LemonError):
    """Source unreadable, undecodable, or otherwise unfit for ingestion."""


class DuplicateVideo(LemonError):
    """A video_id already present in the manifest was ingested again."""


class NotFound(LemonError):
    """A store key, task, video, or file that should exist does not."""


class FrameExists(LemonError):
    """A frame key was written twice with different content."""


class NoFrames(LemonError):
    """An operation that needs at least one frame got an empty sequence."""


class IncompleteScores(LemonError):
    """Per-frame scores are missing for some sampled frames of a video."""


class NoSurgicalSpan(LemonError):
    """No run of three or more consecutive surgical frames exists."""


class ZeroVector(LemonError):
    """Cosine geometry is undefined for a zero-magnitude embedding."""


class NoNeighbors(LemonError):
    """A nearest-neighbor query found no eligible candidates."""


class EmptyPool(LemonError):
    """An augmentation pool with zero slots cannot be sampled."""


class InsufficientPool(LemonError):
    """Pair sampling needs at least two distinct pool entries."""


class ShapeError(LemonError):
    """Array arguments disagree in shape or length."""


class NumericError(LemonError):
    """A numeric routine produced or detected non-finite values."""


class EmptyBatch(LemonError):
    """A batch statistic was requested over zero items."""


class InvalidTransition(LemonError):
    """A state machine was asked to move backwards or from a terminal state."""


class StageOrderError(LemonError):
    """A pipeline stage ran before its prerequisites passed."""


class DecisionConflict(LemonError):
    """A second terminal decision was attempted on the same review task."""


class MetricUndefined(LemonError):
    """A metric has no evaluable items (empty input or no positives)."""


class ConfigError(LemonError):
    """A configuration file is missing required keys or violates bounds."""


class ServiceError(LemonError):
    """A remote scoring or LLM service stayed unreachable after retries."""
