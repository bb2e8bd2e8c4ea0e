"""HTTP facade over the review queue.

Everything a reviewer needs goes through this app: list pending tasks,
inspect one task with its video context, submit a terminal decision, and
fetch the pixels (frames, storyboards) the decision is about. The bundled
web UI, when built, is served from the same process.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import DecisionConflict, InvalidTransition, LemonError, NotFound
from .pipeline import Pipeline
from .storyboard import load_storyboard_bytes
from .store import Rejected


class DecisionBody(BaseModel):
    action: str
    labels: dict[str, Any] | None = None
    note: str | None = None
    token: str | None = None
    actor: str = "reviewer"


def _stage_status_json(record) -> dict:
    out = {}
    for name, state in record.stage_status.items():
        if isinstance(state, Rejected):
            out[name] = {"rejected": state.reason}
        else:
            out[name] = state
    return out


def _task_json(pipeline: Pipeline, task) -> dict:
    body = task.to_json()
    try:
        record = pipeline.manifest.get(task.video_id)
        body["video"] = {
            "video_id": record.video_id,
            "title": record.title,
            "duration_s": record.duration_s,
            "stage_status": _stage_status_json(record),
        }
    except NotFound:
        body["video"] = None
    return body


def create_app(pipeline: Pipeline, ui_dist: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="lemon review")

    @app.get("/api/queue")
    def queue(kind: str | None = None, status: str | None = "pending") -> dict:
        if status == "all":
            status = None
        tasks = pipeline.queue(kind=kind, status=status)
        return {"tasks": [t.summary() for t in tasks]}

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str) -> dict:
        try:
            task = pipeline.get_task(task_id)
        except NotFound as exc:
            raise HTTPException(404, str(exc))
        return _task_json(pipeline, task)

    @app.post("/api/tasks/{task_id}/decision")
    def decide(task_id: str, body: DecisionBody) -> dict:
        try:
            task = pipeline.decide(
                task_id,
                body.action,
                actor=body.actor,
                labels=body.labels,
                note=body.note,
                token=body.token,
            )
        except NotFound as exc:
            raise HTTPException(404, str(exc))
        except DecisionConflict as exc:
            raise HTTPException(409, str(exc))
        except (ValueError, InvalidTransition) as exc:
            raise HTTPException(400, str(exc))
        except LemonError as exc:
            raise HTTPException(400, str(exc))
        return _task_json(pipeline, task)

    @app.get("/api/frames/{key:path}")
    def frame(key: str) -> Response:
        try:
            data = pipeline.frames.get(key)
        except NotFound as exc:
            raise HTTPException(404, str(exc))
        return Response(content=data, media_type="image/png")

    @app.get("/api/storyboards/{video_id}")
    def storyboard(video_id: str) -> Response:
        try:
            data = load_storyboard_bytes(pipeline.storyboards_dir, video_id)
        except NotFound as exc:
            raise HTTPException(404, str(exc))
        return Response(content=data, media_type="image/png")

    dist = Path(ui_dist) if ui_dist is not None else None
    if dist is not None and dist.is_dir():
        app.mount("/", StaticFiles(directory=dist, html=True), name="ui")
    return app
