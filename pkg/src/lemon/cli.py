"""Command line entry points.

Every command operates on one workspace directory (--workdir, or the
LEMON_WORKDIR environment variable) and prints a JSON summary to stdout so
runs can be scripted and diffed.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .annotate import BUILTIN_TABLE, KeywordTable
from .distill import load_experiment, make_cluster_dataset, toy_train
from .embed import Scope, EmbeddingIndex, read_embeddings, video_embedding
from .errors import LemonError
from .metrics import evaluate
from .pipeline import Pipeline, PipelineConfig
from .store import read_jsonl


def _echo(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _pipeline(ctx: click.Context, **overrides) -> Pipeline:
    workdir: Path = ctx.obj["workdir"]
    manifest = ctx.obj.get("manifest")
    config = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    return Pipeline(workdir, config, manifest_path=manifest)


def _read_sources(path: Path) -> list[dict]:
    """One source per line: either a bare path/URL or a JSON object."""
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            rows.append(json.loads(line))
        else:
            rows.append({"source": line, "title": Path(line).stem})
    return rows


@click.group()
@click.option(
    "--workdir",
    type=click.Path(path_type=Path),
    default=Path("lemon-workspace"),
    envvar="LEMON_WORKDIR",
    show_default=True,
    help="Workspace directory holding the manifest and all stores.",
)
@click.pass_context
def main(ctx: click.Context, workdir: Path) -> None:
    ctx.ensure_object(dict)
    ctx.obj["workdir"] = workdir


@main.command()
@click.option("--sources", "sources_file", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--manifest", type=click.Path(path_type=Path), default=None, help="Manifest path override.")
@click.pass_context
def ingest(ctx: click.Context, sources_file: Path, manifest: Path | None) -> None:
    """Register videos listed in a sources file."""
    ctx.obj["manifest"] = manifest
    pipe = _pipeline(ctx)
    _echo(pipe.ingest(_read_sources(sources_file)))


@main.command()
@click.option("--auto-approve", is_flag=True, help="Record ci-bot approvals instead of waiting for review.")
@click.pass_context
def storyboard(ctx: click.Context, auto_approve: bool) -> None:
    """Sample frames at 1 fps and build the 4x4 review collage."""
    pipe = _pipeline(ctx, auto_approve=auto_approve)
    _echo(pipe.run_stage("storyboard"))


@main.command("scores-import")
@click.option("--file", "file_", type=click.Path(exists=True, path_type=Path), required=True)
@click.pass_context
def scores_import(ctx: click.Context, file_: Path) -> None:
    """Import per-frame surgical probabilities from a JSONL file."""
    pipe = _pipeline(ctx)
    count = pipe.import_scores(read_jsonl(file_))
    _echo({"imported": count})


@main.command()
@click.option("--theta", type=float, default=0.5, show_default=True)
@click.option("--max-nonsurgical", type=float, default=0.10, show_default=True)
@click.option("--auto-approve", is_flag=True)
@click.pass_context
def trim(ctx: click.Context, theta: float, max_nonsurgical: float, auto_approve: bool) -> None:
    """Find the surgical span, trim to it, and apply the content filter."""
    pipe = _pipeline(
        ctx, theta=theta, max_nonsurgical=max_nonsurgical, auto_approve=auto_approve
    )
    _echo(pipe.run_stage("trim"))


@main.command()
@click.option("--boxes", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--min-conf", type=float, default=0.25, show_default=True)
@click.pass_context
def obliterate(ctx: click.Context, boxes: Path | None, min_conf: float) -> None:
    """Black out detected identifying regions on kept frames."""
    pipe = _pipeline(ctx, min_conf=min_conf)
    if boxes is not None:
        pipe.import_boxes(read_jsonl(boxes))
    _echo(pipe.run_stage("obliterate"))


@main.command()
@click.option("--keywords", default="builtin", show_default=True, help="'builtin' or a JSON vocabulary file.")
@click.option("--llm-endpoint", default=None, help="Completion endpoint for titles no keyword matches.")
@click.option("--llm-model", default="default", show_default=True)
@click.option("--auto-approve", is_flag=True)
@click.pass_context
def annotate(
    ctx: click.Context,
    keywords: str,
    llm_endpoint: str | None,
    llm_model: str,
    auto_approve: bool,
) -> None:
    """Propose surgery type and procedure labels from video titles."""
    table = BUILTIN_TABLE
    if keywords != "builtin":
        raw = json.loads(Path(keywords).read_text(encoding="utf-8"))
        table = KeywordTable(
            robotic_keywords=tuple(raw["robotic_keywords"]),
            procedure_names=tuple(raw["procedures"]),
        )
    pipe = _pipeline(
        ctx,
        llm_endpoint=llm_endpoint,
        llm_model=llm_model,
        auto_approve=auto_approve,
    )
    pipe.keyword_table = table
    _echo(pipe.run_stage("annotate"))


@main.command()
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def export(ctx: click.Context, out: Path) -> None:
    """Write the final dataset tree for every fully approved video."""
    pipe = _pipeline(ctx)
    _echo(pipe.export_dataset(out))


@main.group()
def tasks() -> None:
    """Inspect and decide review tasks without the web UI."""


@tasks.command("list")
@click.option("--kind", default=None)
@click.option("--status", default="pending", show_default=True)
@click.pass_context
def tasks_list(ctx: click.Context, kind: str | None, status: str) -> None:
    pipe = _pipeline(ctx)
    rows = pipe.queue(kind=kind, status=None if status == "all" else status)
    _echo({"tasks": [t.summary() for t in rows]})


@tasks.command("decide")
@click.argument("task_id")
@click.option("--action", type=click.Choice(["approve", "reject", "correct"]), required=True)
@click.option("--actor", default="reviewer", show_default=True)
@click.option("--labels", default=None, help="JSON payload for corrections.")
@click.option("--note", default=None)
@click.pass_context
def tasks_decide(
    ctx: click.Context,
    task_id: str,
    action: str,
    actor: str,
    labels: str | None,
    note: str | None,
) -> None:
    pipe = _pipeline(ctx)
    try:
        task = pipe.decide(
            task_id,
            action,
            actor=actor,
            labels=json.loads(labels) if labels else None,
            note=note,
        )
    except (LemonError, ValueError) as exc:
        raise click.ClickException(str(exc))
    _echo(task.to_json())


@main.group()
def embed() -> None:
    """Frame embedding utilities."""


@embed.command("aggregate")
@click.option("--embeddings", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option(
    "--scope",
    type=click.Choice([s.value for s in Scope]),
    default=Scope.SAME_VIDEO.value,
    show_default=True,
)
@click.option("--k", type=int, default=20, show_default=True)
@click.pass_context
def embed_aggregate(ctx: click.Context, embeddings: Path, out: Path, scope: str, k: int) -> None:
    """Aggregate frame embeddings into typicality-weighted video embeddings."""
    vectors = read_embeddings(embeddings)
    index = EmbeddingIndex(vectors)
    by_video: dict[str, list] = {}
    for vec in vectors:
        by_video.setdefault(vec.video_id, []).append(vec)
    rows = []
    for video_id in sorted(by_video):
        agg = video_embedding(by_video[video_id], index, scope=Scope(scope), k=k)
        rows.append(
            {
                "video_id": agg.video_id,
                "values": [float(x) for x in agg.values],
                "weights": [float(w) for w in agg.weights],
                "typicalities": [float(t) for t in agg.typicalities],
                "flagged": list(agg.flagged),
            }
        )
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _echo({"videos": len(rows), "out": str(out)})


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--trace", type=click.Path(path_type=Path), default=None, help="Defaults to <workdir>/steps.jsonl.")
@click.pass_context
def distill(ctx: click.Context, config_path: Path, trace: Path | None) -> None:
    """Run the toy distillation loop described by an experiment file."""
    config, dataset_spec = load_experiment(config_path)
    dataset = make_cluster_dataset(
        n_clusters=dataset_spec.get("clusters", 3),
        videos_per_cluster=dataset_spec.get("videos_per_cluster", 4),
        frames_per_video=dataset_spec.get("frames_per_video", 6),
        input_dim=dataset_spec.get("input_dim", 64),
        seed=config.seed,
    )
    trace_path = trace if trace is not None else ctx.obj["workdir"] / "steps.jsonl"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    result = toy_train(dataset, config, trace_path=trace_path)
    _echo(
        {
            "steps": len(result.entries),
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "trace": str(trace_path),
        }
    )


@main.command("eval")
@click.option("--pred", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--metric", default="all", show_default=True)
@click.pass_context
def eval_cmd(ctx: click.Context, pred: Path, metric: str) -> None:
    """Score a predictions file and print the metric report."""
    rows = read_jsonl(pred)
    try:
        _echo(evaluate(rows, metric))
    except LemonError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--ui", type=click.Path(path_type=Path), default=None, help="Built UI directory to serve at /.")
@click.pass_context
def serve(ctx: click.Context, host: str, port: int, ui: Path | None) -> None:
    """Serve the review API (and the UI, when a build is available)."""
    import uvicorn

    from .review_api import create_app

    pipe = _pipeline(ctx)
    ui_dir = ui if ui is not None else Path("frontend") / "dist"
    app = create_app(pipe, ui_dist=ui_dir if ui_dir.is_dir() else None)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
