"""Stage orchestration: runs the curation pipeline over a workspace
directory, spawns human review tasks at the three gates, applies decisions
transactionally, and exports the final dataset tree.

Workspace layout:


    manifest.jsonl        one record per video
    manifest.meta.json    config echo + hash for provenance
    frames/               original sampled frames (write-once)
    obliterated/          redacted copies, only for frames a box touched
    storyboards/          one collage PNG per video
    scores.jsonl          imported per-frame surgical probabilities
    boxes.jsonl           imported detector boxes
    trims.jsonl           machine/human trim windows and kept frame indices
    labels.jsonl          procedure/surgery-type proposals and QC state
    tasks.jsonl           review task states
    audit.jsonl           append-only decision log
    fixtures/llm/         recorded completion transcripts
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .annotate import (
    BUILTIN_TABLE,
    HttpCompletionClient,
    ReplayCompletionClient,
    apply_qc_decision,
    load_labels,
    propose_label,
    save_labels,
)
from .curate import (
    accept_after_trim,
    binarize,
    boxes_by_video,
    drop_nonsurgical_frames,
    find_surgical_span,
    obliterate_regions,
    TrimWindow,
)
from .errors import (
    DecisionConflict,
    IncompleteScores,
    LemonError,
    NotFound,
    StageOrderError,
)
from .storyboard import compose_storyboard, save_storyboard, select_keyframes
from .store import (
    FrameStore,
    Manifest,
    PASSED,
    PENDING,
    Rejected,
    VideoRecord,
    atomic_write_text,
    decode_image,
    encode_png,
    frame_key,
    ingest_video,
    read_jsonl,
    sample_frames,
    write_jsonl,
)

STORYBOARD_GATE = "storyboard_verify"
TRIM_GATE = "trim_verify"
LABEL_GATE = "label_qc"
TASK_KINDS = (STORYBOARD_GATE, TRIM_GATE, LABEL_GATE)

APPROVING_ACTIONS = ("approve", "correct")
CI_ACTOR = "ci-bot"


@dataclass(frozen=True)
class PipelineConfig:
    """Stage thresholds, endpoints, and the one seed all randomness uses."""

    theta: float = 0.5
    max_nonsurgical: float = 0.10
    min_conf: float = 0.25
    seed: int = 30
    auto_approve: bool = False
    tile_w: int = 320
    tile_h: int = 180
    llm_endpoint: str | None = None
    llm_model: str = "default"
    llm_token_env: str = "LEMON_LLM_TOKEN"
    scoring_endpoint: str | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class ReviewTask:
    """One pending human decision; terminal exactly once."""

    task_id: str
    video_id: str
    kind: str
    payload: dict
    seq: int
    created_at: float
    status: str = PENDING
    decided_by: str | None = None
    decided_at: float | None = None
    note: str | None = None
    decided_token: str | None = None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, raw: Mapping) -> "ReviewTask":
        return cls(**raw)

    def summary(self) -> dict:
        return {
            "task_id": self.task_id,
            "video_id": self.video_id,
            "kind": self.kind,
            "status": self.status,
            "created_at": self.created_at,
        }


def task_id_for(kind: str, video_id: str) -> str:
    digest = hashlib.sha1(f"{kind}:{video_id}".encode("utf-8")).hexdigest()[:10]
    return f"t{digest}"


class Pipeline:
    """All mutable pipeline state for one workspace, with serialized writes."""

    def __init__(
        self,
        workdir: Path | str,
        config: PipelineConfig | None = None,
        manifest_path: Path | str | None = None,
    ):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.config = config or PipelineConfig()
        self.manifest_path = (
            Path(manifest_path) if manifest_path else self.workdir / "manifest.jsonl"
        )
        self.frames = FrameStore(self.workdir / "frames")
        self.obliterated = FrameStore(self.workdir / "obliterated")
        self.storyboards_dir = self.workdir / "storyboards"
        self.fixtures_dir = self.workdir / "fixtures" / "llm"
        self.keyword_table = BUILTIN_TABLE
        self._lock = threading.RLock()
        self.manifest = Manifest.load(self.manifest_path)
        self.tasks: dict[str, ReviewTask] = {}
        for row in self._read_rows("tasks.jsonl"):
            task = ReviewTask.from_json(row)
            self.tasks[task.task_id] = task
        self.labels = load_labels(self.workdir / "labels.jsonl")
        self.trims: dict[str, dict] = {
            row["video_id"]: row for row in self._read_rows("trims.jsonl")
        }

    # -- paths and persistence ------------------------------------------------

    def _read_rows(self, name: str) -> list[dict]:
        path = self.workdir / name
        return read_jsonl(path) if path.exists() else []

    def _save_tasks(self) -> None:
        ordered = sorted(self.tasks.values(), key=lambda t: t.seq)
        write_jsonl(self.workdir / "tasks.jsonl", [t.to_json() for t in ordered])

    def _save_trims(self) -> None:
        rows = [self.trims[k] for k in sorted(self.trims)]
        write_jsonl(self.workdir / "trims.jsonl", rows)

    def _save_labels(self) -> None:
        save_labels(self.workdir / "labels.jsonl", self.labels)

    def _append_audit(self, entry: dict) -> None:
        path = self.workdir / "audit.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")

    def audit_entries(self) -> list[dict]:
        return self._read_rows("audit.jsonl")

    def save(self) -> None:
        with self._lock:
            self.manifest.save(self.manifest_path)
            self._save_tasks()
            self._save_trims()
            self._save_labels()
            meta = {"config": self.config.to_json(), "config_hash": self.config.hash()}
            atomic_write_text(
                self.workdir / "manifest.meta.json",
                json.dumps(meta, indent=2, sort_keys=True) + "\n",
            )

    # -- scores and boxes -----------------------------------------------------

    def import_scores(self, rows: Iterable[Mapping]) -> int:
        from .curate import scores_by_video

        table = scores_by_video(rows)  # validates every row
        flat = [
            {"video_id": vid, "index": idx, "p_surgical": p}
            for vid in sorted(table)
            for idx, p in sorted(table[vid].items())
        ]
        write_jsonl(self.workdir / "scores.jsonl", flat)
        return len(flat)

    def import_boxes(self, rows: Iterable[Mapping]) -> int:
        table = boxes_by_video(rows)
        flat = [
            {
                "video_id": vid,
                "index": idx,
                "boxes": [b.to_list() for b in boxes],
            }
            for vid in sorted(table)
            for idx, boxes in sorted(table[vid].items())
        ]
        write_jsonl(self.workdir / "boxes.jsonl", flat)
        return len(flat)

    def scores_table(self) -> dict[str, dict[int, float]]:
        from .curate import scores_by_video

        return scores_by_video(self._read_rows("scores.jsonl"))

    def boxes_table(self) -> dict:
        return boxes_by_video(self._read_rows("boxes.jsonl"))

    # -- ingestion ------------------------------------------------------------

    def ingest(self, sources: Sequence[Mapping]) -> dict:
        """Ingest a batch; per-source failures are recorded, not fatal."""
        ingested, failures = [], []
        for item in sources:
            source = item["source"]
            try:
                record = ingest_video(
                    source,
                    item,
                    known_ids=[v.video_id for v in self.manifest.videos()],
                )
                self.manifest.add(record)
                ingested.append(record.video_id)
            except LemonError as exc:
                failures.append({"source": str(source), "error": str(exc)})
        self.save()
        return {"ingested": ingested, "failures": failures}

    # -- review tasks ---------------------------------------------------------

    def _create_task(self, kind: str, video_id: str, payload: dict) -> ReviewTask:
        task_id = task_id_for(kind, video_id)
        existing = self.tasks.get(task_id)
        if existing is not None:
            return existing
        task = ReviewTask(
            task_id=task_id,
            video_id=video_id,
            kind=kind,
            payload=payload,
            seq=len(self.tasks),
            created_at=time.time(),
        )
        self.tasks[task_id] = task
        return task

    def queue(self, kind: str | None = None, status: str | None = PENDING) -> list[ReviewTask]:
        tasks = sorted(self.tasks.values(), key=lambda t: t.seq)
        if kind:
            tasks = [t for t in tasks if t.kind == kind]
        if status:
            tasks = [t for t in tasks if t.status == status]
        return tasks

    def get_task(self, task_id: str) -> ReviewTask:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise NotFound(f"no task {task_id}") from None

    def decide(
        self,
        task_id: str,
        action: str,
        actor: str,
        labels: Mapping | None = None,
        note: str | None = None,
        token: str | None = None,
    ) -> ReviewTask:
        """Apply one terminal decision to a task, its video, and its labels.

        A repeat of an already-applied decision carrying the same idempotency
        token returns the stored result; any other second decision conflicts.
        """
        with self._lock:
            task = self.get_task(task_id)
            if task.status != PENDING:
                if token is not None and task.decided_token == token:
                    return task
                raise DecisionConflict(f"task {task_id} already {task.status}")
            if action not in ("approve", "reject", "correct"):
                raise ValueError(f"unknown action {action!r}")
            if action == "correct" and task.kind == STORYBOARD_GATE:
                raise ValueError("storyboard review supports approve/reject only")

            detail = self._apply_decision(task, action, labels, note)

            task.status = {"approve": "approved", "reject": "rejected", "correct": "corrected"}[action]
            task.decided_by = actor
            task.decided_at = time.time()
            task.note = note
            task.decided_token = token
            self._append_audit(
                {
                    "task_id": task.task_id,
                    "video_id": task.video_id,
                    "kind": task.kind,
                    "action": action,
                    "actor": actor,
                    "note": note,
                    "at": task.decided_at,
                    "detail": detail,
                }
            )
            self.manifest.save(self.manifest_path)
            self._save_tasks()
            self._save_trims()
            self._save_labels()
            return task

    def _apply_decision(
        self, task: ReviewTask, action: str, labels: Mapping | None, note: str | None
    ) -> dict:
        video_id = task.video_id
        detail: dict = {}
        if task.kind == STORYBOARD_GATE:
            if action == "approve":
                self.manifest.update_stage(video_id, "video_verified", PASSED)
            else:
                self.manifest.update_stage(
                    video_id, "video_verified", Rejected(note or "storyboard rejected")
                )
        elif task.kind == TRIM_GATE:
            if action == "correct":
                if not labels or "start" not in labels or "end" not in labels:
                    raise ValueError("trim correction needs start and end")
                detail = self._correct_trim(video_id, int(labels["start"]), int(labels["end"]))
            # approve: machine stages already reflect the accepted window;
            # reject: video stalls via task status, checked at export.
        elif task.kind == LABEL_GATE:
            label = self.labels.get(video_id)
            if label is None:
                raise NotFound(f"no label proposal for {video_id}")
            if action == "approve":
                self.labels[video_id] = apply_qc_decision(label, "approve")
                self.manifest.update_stage(video_id, "annotated", PASSED)
            elif action == "correct":
                self.labels[video_id] = apply_qc_decision(label, "correct", labels)
                detail = dict(self.labels[video_id].correction or {})
                self.manifest.update_stage(video_id, "annotated", PASSED)
            else:
                self.manifest.update_stage(
                    video_id, "annotated", Rejected(note or "label rejected")
                )
        return detail

    def _correct_trim(self, video_id: str, start: int, end: int) -> dict:
        record = self.manifest.get(video_id)
        total = record.expected_frame_count()
        if not 0 <= start <= end < total:
            raise ValueError(f"corrected window [{start}, {end}] outside 0..{total - 1}")
        old = self.trims.get(video_id)
        if old is None:
            raise NotFound(f"no trim record for {video_id}")
        scores = self.scores_table().get(video_id, {})
        labels = binarize([scores[i] for i in range(total)], self.config.theta)
        window = TrimWindow(start=start, end=end)
        kept, excluded = drop_nonsurgical_frames(labels, window)
        fraction = len(excluded) / window.length()
        new_row = {
            "video_id": video_id,
            "start": start,
            "end": end,
            "fraction": fraction,
            "kept": kept,
            "excluded": excluded,
            "provenance": "human",
        }
        self.trims[video_id] = new_row
        return {"old": {"start": old["start"], "end": old["end"]}, "new": {"start": start, "end": end}}

    def _auto_approve(self, task: ReviewTask) -> None:
        if task.status == PENDING:
            self.decide(task.task_id, "approve", CI_ACTOR, note="auto-approved")

    def gate_decisions(self, video_id: str) -> dict[str, str]:
        """kind -> action for this video's approving decisions in the audit log."""
        seen: dict[str, str] = {}
        for entry in self.audit_entries():
            if entry["video_id"] == video_id and entry["action"] in APPROVING_ACTIONS:
                seen[entry["kind"]] = entry["action"]
        return seen

    # -- stages ---------------------------------------------------------------

    STAGE_PREREQS = {
        "storyboard": ("ingested",),
        "trim": ("video_verified",),
        "obliterate": ("filtered",),
        "annotate": ("obliterated",),
    }
    STAGE_SETS = {
        "storyboard": "storyboarded",
        "trim": "trimmed",
        "obliterate": "obliterated",
        "annotate": "annotated",
    }

    def run_stage(self, stage: str, video_ids: Sequence[str] | None = None) -> dict:
        """Run one stage over eligible videos.

        Explicitly targeted videos must have their prerequisites passed, else
        StageOrderError; untargeted runs silently skip ineligible videos.
        Per-video domain failures reject that video and never abort the batch.
        """
        if stage not in self.STAGE_PREREQS:
            raise ValueError(f"unknown stage {stage!r}")
        prereqs = self.STAGE_PREREQS[stage]
        sets = self.STAGE_SETS[stage]
        runner = getattr(self, f"_stage_{stage}")

        with self._lock:
            if video_ids is None:
                records = self.manifest.videos()
            else:
                records = [self.manifest.get(v) for v in video_ids]
                for record in records:
                    for prereq in prereqs:
                        if record.stage(prereq) != PASSED:
                            raise StageOrderError(
                                f"{record.video_id}: stage {stage} requires {prereq} passed"
                            )
                    if stage == "obliterate" and not self._trim_gate_cleared(record.video_id):
                        raise StageOrderError(
                            f"{record.video_id}: stage obliterate requires an "
                            "approved or corrected trim review"
                        )
            processed, skipped, rejected = [], [], []
            for record in records:
                if record.stage(sets) != PENDING:
                    skipped.append(record.video_id)
                    continue
                if any(record.stage(p) != PASSED for p in prereqs):
                    skipped.append(record.video_id)
                    continue
                if stage == "obliterate" and not self._trim_gate_cleared(record.video_id):
                    skipped.append(record.video_id)
                    continue
                try:
                    runner(record)
                    processed.append(record.video_id)
                except LemonError as exc:
                    # Reject only if the stage is still undecided; a failure
                    # after the stage itself passed must not falsify it.
                    if self.manifest.get(record.video_id).stage(sets) == PENDING:
                        self.manifest.update_stage(
                            record.video_id, sets, Rejected(str(exc))
                        )
                    rejected.append({"video_id": record.video_id, "reason": str(exc)})
            self.save()
            return {"stage": stage, "processed": processed, "skipped": skipped, "rejected": rejected}

    def _trim_gate_cleared(self, video_id: str) -> bool:
        task = self.tasks.get(task_id_for(TRIM_GATE, video_id))
        return task is not None and task.status in ("approved", "corrected")

    def _stage_storyboard(self, record: VideoRecord) -> None:
        refs = sample_frames(record, self.frames)
        keyframes = select_keyframes(refs)
        board = compose_storyboard(
            keyframes, self.frames, self.config.tile_w, self.config.tile_h
        )
        save_storyboard(board, self.storyboards_dir)
        self.manifest.update_stage(record.video_id, "storyboarded", PASSED)
        task = self._create_task(
            STORYBOARD_GATE,
            record.video_id,
            {
                "title": record.title,
                "keyframe_indices": [ref.index for ref in keyframes],
                "storyboard_url": f"/api/storyboards/{record.video_id}",
            },
        )
        if self.config.auto_approve:
            self._auto_approve(task)

    def _stage_trim(self, record: VideoRecord) -> None:
        video_id = record.video_id
        total = record.expected_frame_count()
        scores = self.scores_table().get(video_id, {})
        missing = [i for i in range(total) if i not in scores]
        if missing:
            raise IncompleteScores(
                f"missing scores for {len(missing)} of {total} frames"
            )
        labels = binarize([scores[i] for i in range(total)], self.config.theta)
        window = find_surgical_span(labels)  # NoSurgicalSpan rejects the video
        self.manifest.update_stage(video_id, "trimmed", PASSED)
        accepted, fraction = accept_after_trim(
            labels, window, self.config.max_nonsurgical
        )
        if not accepted:
            self.manifest.update_stage(
                video_id,
                "filtered",
                Rejected(
                    f"non-surgical fraction {fraction:.6f} exceeds "
                    f"{self.config.max_nonsurgical}"
                ),
            )
            return
        self.manifest.update_stage(video_id, "filtered", PASSED)
        kept, excluded = drop_nonsurgical_frames(labels, window)
        self.trims[video_id] = {
            "video_id": video_id,
            "start": window.start,
            "end": window.end,
            "fraction": fraction,
            "kept": kept,
            "excluded": excluded,
            "provenance": "machine",
        }
        strip = [
            {"index": i, "p_surgical": scores[i]}
            for i in sorted(
                set(range(max(0, window.start - 5), min(total, window.start + 6)))
                | set(range(max(0, window.end - 5), min(total, window.end + 6)))
            )
        ]
        task = self._create_task(
            TRIM_GATE,
            video_id,
            {
                "start": window.start,
                "end": window.end,
                "fraction": fraction,
                "frame_count": total,
                "strip": strip,
            },
        )
        if self.config.auto_approve:
            self._auto_approve(task)

    def _stage_obliterate(self, record: VideoRecord) -> None:
        video_id = record.video_id
        trim = self.trims.get(video_id)
        if trim is None:
            raise NotFound(f"no trim window recorded for {video_id}")
        boxes = self.boxes_table().get(video_id, {})
        for index in trim["kept"]:
            frame_boxes = boxes.get(index, [])
            applicable = [b for b in frame_boxes if b.conf >= self.config.min_conf]
            if not applicable:
                continue
            key = frame_key(video_id, index)
            image = decode_image(self.frames.get(key))
            redacted = obliterate_regions(image, applicable, self.config.min_conf)
            self.obliterated.put(key, encode_png(redacted))
        self.manifest.update_stage(video_id, "obliterated", PASSED)

    def _llm_client(self):
        live = None
        if self.config.llm_endpoint:
            live = HttpCompletionClient(
                self.config.llm_endpoint,
                model=self.config.llm_model,
                token_env=self.config.llm_token_env,
            )
        return ReplayCompletionClient(self.fixtures_dir, live)

    def _stage_annotate(self, record: VideoRecord) -> None:
        video_id = record.video_id
        label, outcome = propose_label(
            video_id, record.title, self.keyword_table, self._llm_client()
        )
        self.labels[video_id] = label
        payload = {
            "title": record.title,
            "procedures": list(label.procedures),
            "surgery_type": label.surgery_type,
            "provenance": dict(label.provenance),
        }
        if outcome is not None:
            payload["llm"] = {"status": outcome.status, "reason": outcome.reason}
        task = self._create_task(LABEL_GATE, video_id, payload)
        if self.config.auto_approve:
            if label.procedures:
                self._auto_approve(task)
            else:
                self.decide(
                    task.task_id,
                    "reject",
                    CI_ACTOR,
                    note="no procedures proposed",
                )

    # -- export ---------------------------------------------------------------

    EXPORT_STAGES = (
        "ingested",
        "storyboarded",
        "video_verified",
        "trimmed",
        "filtered",
        "obliterated",
        "annotated",
    )

    def export_eligibility(self, record: VideoRecord) -> str | None:
        """Reason this video cannot export, or None if it is eligible."""
        for kind in TASK_KINDS:
            task = self.tasks.get(task_id_for(kind, record.video_id))
            if task is not None and task.status == "rejected":
                return f"{kind} rejected by review"
        for stage in self.EXPORT_STAGES:
            state = record.stage(stage)
            if isinstance(state, Rejected):
                return f"rejected at {stage}: {state.reason}"
            if state != PASSED:
                return f"stage {stage} not passed"
        gates = self.gate_decisions(record.video_id)
        for kind in TASK_KINDS:
            if kind not in gates:
                return f"{kind} decision missing"
        label = self.labels.get(record.video_id)
        if label is None or label.qc_status not in ("approved", "corrected"):
            return "label not QC-accepted"
        return None

    def export_dataset(self, out_dir: Path | str) -> dict:
        """Write the export tree: frames per video, labels, stats, exclusions.

        Frames keep their original 1-fps indices. A frame with boxes uses its
        redacted copy; if the redaction stage has not produced one (a trim
        window was corrected afterwards, say) it is redacted on the fly.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        boxes_all = self.boxes_table()
        exported = []
        exclusions = []
        total_frames = 0
        per_procedure: dict[str, int] = {}
        surgery_types: dict[str, int] = {}
        with self._lock:
            for record in self.manifest.videos():
                reason = self.export_eligibility(record)
                if reason is not None:
                    exclusions.append({"video_id": record.video_id, "reason": reason})
                    continue
                video_id = record.video_id
                trim = self.trims[video_id]
                video_boxes = boxes_all.get(video_id, {})
                for index in trim["kept"]:
                    key = frame_key(video_id, index)
                    if self.obliterated.exists(key):
                        data = self.obliterated.get(key)
                    else:
                        data = self.frames.get(key)
                        applicable = [
                            b
                            for b in video_boxes.get(index, [])
                            if b.conf >= self.config.min_conf
                        ]
                        if applicable:
                            redacted = obliterate_regions(
                                decode_image(data), applicable, self.config.min_conf
                            )
                            data = encode_png(redacted)
                    dest = out / video_id / f"{index:08d}.png"
                    if not dest.exists() or dest.read_bytes() != data:
                        dest.parent.mkdir(parents=True, exist_ok=True)
                        dest.write_bytes(data)
                    total_frames += 1
                label = self.labels[video_id]
                for proc in label.procedures:
                    per_procedure[proc] = per_procedure.get(proc, 0) + 1
                surgery_types[label.surgery_type] = (
                    surgery_types.get(label.surgery_type, 0) + 1
                )
                exported.append(video_id)
                if record.stage("exported") == PENDING:
                    self.manifest.update_stage(video_id, "exported", PASSED)
            export_labels = {
                vid: self.labels[vid] for vid in exported if vid in self.labels
            }
            save_labels(out / "labels.jsonl", export_labels)
            stats = {
                "videos": len(exported),
                "frames": total_frames,
                "per_procedure": dict(sorted(per_procedure.items())),
                "surgery_types": dict(sorted(surgery_types.items())),
            }
            atomic_write_text(
                out / "stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n"
            )
            atomic_write_text(
                out / "exclusions.json",
                json.dumps(
                    sorted(exclusions, key=lambda e: e["video_id"]),
                    indent=2,
                    sort_keys=True,
                )
                + "\n",
            )
            self.save()
        return {"exported": sorted(exported), "stats": stats, "exclusions": exclusions}
