"""End-to-end command walk through the click entry points.

Each command prints a JSON document; the walk drives a real workspace from
sources file to export, then exercises the analysis commands.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from lemon.cli import main
from lemon.embed import EmbeddingVector, write_embeddings
from lemon.pipeline import Pipeline

from conftest import write_mp4


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, workdir, *args):
    result = runner.invoke(main, ["--workdir", str(workdir), *args])
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


class TestPipelineCommands:
    def test_sources_to_export_walk(self, runner, tmp_path):
        workdir = tmp_path / "ws"
        clip = write_mp4(tmp_path / "clip.mp4", seconds=6.0, seed=3)
        sources = tmp_path / "sources.txt"
        sources.write_text(
            json.dumps({"source": str(clip), "title": "Open appendectomy teaching"})
            + "\n"
        )

        ingested = invoke(runner, workdir, "ingest", "--sources", str(sources))
        assert len(ingested["ingested"]) == 1
        assert ingested["failures"] == []
        vid = ingested["ingested"][0]

        board = invoke(runner, workdir, "storyboard", "--auto-approve")
        assert board["processed"] == [vid]

        scores = tmp_path / "scores.jsonl"
        scores.write_text(
            "\n".join(
                json.dumps({"video_id": vid, "index": i, "p_surgical": 0.9})
                for i in range(6)
            )
            + "\n"
        )
        imported = invoke(runner, workdir, "scores-import", "--file", str(scores))
        assert imported == {"imported": 6}

        trimmed = invoke(runner, workdir, "trim", "--auto-approve")
        assert trimmed["processed"] == [vid]

        boxes = tmp_path / "boxes.jsonl"
        boxes.write_text(
            json.dumps({"video_id": vid, "index": 1, "boxes": [[2, 2, 8, 8, 0.9]]})
            + "\n"
        )
        oblit = invoke(runner, workdir, "obliterate", "--boxes", str(boxes))
        assert oblit["processed"] == [vid]

        annotated = invoke(runner, workdir, "annotate", "--auto-approve")
        assert annotated["processed"] == [vid]

        out = tmp_path / "dataset"
        exported = invoke(runner, workdir, "export", "--out", str(out))
        assert exported["exported"] == [vid]
        assert exported["stats"]["frames"] == 6
        assert (out / vid / "00000000.png").exists()
        assert (out / "stats.json").exists()

    def test_bare_source_lines_take_stem_titles(self, runner, tmp_path):
        workdir = tmp_path / "ws"
        clip = write_mp4(tmp_path / "hysterectomy-course.mp4", seconds=6.0)
        sources = tmp_path / "sources.txt"
        sources.write_text(f"{clip}\n")
        invoke(runner, workdir, "ingest", "--sources", str(sources))
        pipe = Pipeline(workdir)
        (record,) = pipe.manifest.videos()
        assert record.title == "hysterectomy-course"

    def test_custom_keyword_table(self, runner, tmp_path):
        # A custom table changes matching only; labels stay inside the
        # canonical procedure vocabulary.
        workdir = tmp_path / "ws"
        clip = write_mp4(tmp_path / "clip.mp4", seconds=6.0)
        sources = tmp_path / "sources.txt"
        sources.write_text(
            json.dumps({"source": str(clip), "title": "Frobot colectomy session"})
            + "\n"
        )
        invoke(runner, workdir, "ingest", "--sources", str(sources))
        invoke(runner, workdir, "storyboard", "--auto-approve")
        vid = Pipeline(workdir).manifest.videos()[0].video_id
        scores = tmp_path / "scores.jsonl"
        scores.write_text(
            "\n".join(
                json.dumps({"video_id": vid, "index": i, "p_surgical": 1.0})
                for i in range(6)
            )
        )
        invoke(runner, workdir, "scores-import", "--file", str(scores))
        invoke(runner, workdir, "trim", "--auto-approve")
        invoke(runner, workdir, "obliterate")

        vocab = tmp_path / "vocab.json"
        vocab.write_text(
            json.dumps({"robotic_keywords": ["Frobot"], "procedures": ["colectomy"]})
        )
        invoke(runner, workdir, "annotate", "--keywords", str(vocab), "--auto-approve")
        (label_row,) = [
            json.loads(line)
            for line in (workdir / "labels.jsonl").read_text().splitlines()
        ]
        assert label_row["procedures"] == ["colectomy"]
        # "Frobot" is robotic only under the custom table
        assert label_row["surgery_type"] == "robotic"


class TestTaskCommands:
    def make_pending_task(self, runner, tmp_path):
        workdir = tmp_path / "ws"
        clip = write_mp4(tmp_path / "clip.mp4", seconds=6.0)
        sources = tmp_path / "sources.txt"
        sources.write_text(
            json.dumps({"source": str(clip), "title": "Colectomy walkthrough"}) + "\n"
        )
        invoke(runner, workdir, "ingest", "--sources", str(sources))
        invoke(runner, workdir, "storyboard")
        return workdir

    def test_list_and_decide(self, runner, tmp_path):
        workdir = self.make_pending_task(runner, tmp_path)
        listing = invoke(runner, workdir, "tasks", "list")
        (task,) = listing["tasks"]
        assert task["kind"] == "storyboard_verify"

        decided = invoke(
            runner,
            workdir,
            "tasks",
            "decide",
            task["task_id"],
            "--action",
            "approve",
            "--actor",
            "cli-user",
        )
        assert decided["status"] == "approved"
        assert decided["decided_by"] == "cli-user"
        assert invoke(runner, workdir, "tasks", "list")["tasks"] == []
        all_tasks = invoke(runner, workdir, "tasks", "list", "--status", "all")
        assert len(all_tasks["tasks"]) == 1

    def test_double_decide_fails_cleanly(self, runner, tmp_path):
        workdir = self.make_pending_task(runner, tmp_path)
        (task,) = invoke(runner, workdir, "tasks", "list")["tasks"]
        invoke(runner, workdir, "tasks", "decide", task["task_id"], "--action", "approve")
        result = runner.invoke(
            main,
            [
                "--workdir",
                str(workdir),
                "tasks",
                "decide",
                task["task_id"],
                "--action",
                "reject",
            ],
        )
        assert result.exit_code != 0
        assert "already approved" in result.output


class TestAnalysisCommands:
    def test_eval_reads_predictions(self, runner, tmp_path):
        pred = tmp_path / "pred.jsonl"
        pred.write_text(
            json.dumps(
                {
                    "video_id": "v1",
                    "frames": [
                        {"gt": "a", "pred": "a"},
                        {"gt": "a", "pred": "b"},
                        {"gt": "b", "pred": "b"},
                        {"gt": "b", "pred": "b"},
                    ],
                }
            )
            + "\n"
        )
        report = invoke(runner, tmp_path / "ws", "eval", "--pred", str(pred))
        assert report["video_level_accuracy"] == 75.0
        assert "jaccard" in report
        assert "relaxed" in report

        only = invoke(
            runner,
            tmp_path / "ws",
            "eval",
            "--pred",
            str(pred),
            "--metric",
            "video-accuracy",
        )
        assert "jaccard" not in only

    def test_embed_aggregate_writes_rows(self, runner, tmp_path):
        rng = np.random.default_rng(3)
        vectors = [
            EmbeddingVector(f"v{v}", i, "colectomy", rng.normal(size=8))
            for v in range(2)
            for i in range(4)
        ]
        emb = tmp_path / "frames.jsonl"
        write_embeddings(emb, vectors)
        out = tmp_path / "videos.jsonl"
        result = invoke(
            runner,
            tmp_path / "ws",
            "embed",
            "aggregate",
            "--embeddings",
            str(emb),
            "--out",
            str(out),
            "--scope",
            "same_video",
        )
        assert result["videos"] == 2
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert [r["video_id"] for r in rows] == ["v0", "v1"]
        assert len(rows[0]["values"]) == 8
        assert len(rows[0]["weights"]) == 4

    def test_distill_runs_an_experiment_file(self, runner, tmp_path):
        config = tmp_path / "exp.toml"
        config.write_text(
            "\n".join(
                [
                    "output_dim = 4",
                    "teacher_temp = 0.04",
                    "student_temp = 1.0",
                    "teacher_momentum = 0.996",
                    "center_momentum = 0.9",
                    "learning_rate = 0.2",
                    "steps = 5",
                    "seed = 30",
                    'pool_scope = "same_procedure"',
                    "",
                    "[dataset]",
                    "clusters = 2",
                    "videos_per_cluster = 2",
                    "frames_per_video = 4",
                    "input_dim = 16",
                ]
            )
        )
        trace = tmp_path / "trace.jsonl"
        report = invoke(
            runner,
            tmp_path / "ws",
            "distill",
            "--config",
            str(config),
            "--trace",
            str(trace),
        )
        assert report["steps"] == 5
        assert np.isfinite(report["initial_loss"])
        assert np.isfinite(report["final_loss"])
        assert len(trace.read_text().splitlines()) == 5
