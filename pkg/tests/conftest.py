import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from lemon.pipeline import Pipeline, PipelineConfig

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, shown even when quiet."""
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")


def write_mp4(
    path: Path,
    seconds: float,
    fps: float = 5.0,
    size: tuple[int, int] = (32, 24),
    seed: int = 0,
) -> Path:
    """A tiny valid mp4 with pseudorandom content; codec noise is expected."""
    w, h = size
    rng = np.random.default_rng(seed)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    assert writer.isOpened(), f"cannot open VideoWriter for {path}"
    for _ in range(int(round(seconds * fps))):
        writer.write(rng.integers(0, 255, (h, w, 3), dtype=np.uint8))
    writer.release()
    return path


@pytest.fixture
def video_factory(tmp_path):
    made = {"n": 0}

    def make(seconds: float = 10.0, fps: float = 5.0, seed: int | None = None) -> Path:
        made["n"] += 1
        return write_mp4(
            tmp_path / f"clip{made['n']:02d}.mp4",
            seconds,
            fps=fps,
            seed=made["n"] if seed is None else seed,
        )

    return make


@pytest.fixture
def pipeline_factory(tmp_path):
    made = {"n": 0}

    def make(**config_kwargs) -> Pipeline:
        made["n"] += 1
        return Pipeline(tmp_path / f"ws{made['n']}", PipelineConfig(**config_kwargs))

    return make


def plant_scores(pipe: Pipeline, video_id: str, surgical: list[bool]) -> None:
    """Install scores matching a boolean per-second surgical plan."""
    rows = [
        {"video_id": video_id, "index": i, "p_surgical": 0.9 if s else 0.1}
        for i, s in enumerate(surgical)
    ]
    existing = []
    scores_path = pipe.workdir / "scores.jsonl"
    if scores_path.exists():
        existing = [json.loads(l) for l in scores_path.read_text().splitlines() if l]
    pipe.import_scores(existing + rows)
