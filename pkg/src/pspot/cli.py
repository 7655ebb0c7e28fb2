"""Command-line entry points for the offline and online stages.

Exit codes: 0 ok, 2 config error, 3 missing asset or model, 4 corrupt index.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import evalkit, pipeline
from .config import load_config
from .errors import ConfigError, CorruptIndex, ModelLoadError, PspotError, VersionMismatch

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_CORRUPT = 4


def _fail(err: Exception) -> None:
    click.echo(f"error: {err}", err=True)
    if isinstance(err, ConfigError):
        sys.exit(EXIT_CONFIG)
    if isinstance(err, (ModelLoadError, FileNotFoundError)):
        sys.exit(EXIT_MISSING)
    if isinstance(err, (CorruptIndex, VersionMismatch)):
        sys.exit(EXIT_CORRUPT)
    sys.exit(1)


def _config(path: str):
    try:
        return load_config(path)
    except ConfigError as e:
        _fail(e)


@click.group()
def main() -> None:
    """Pattern spotting engine for historical document collections."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def preprocess(config_path: str) -> None:
    """Crop pages, place them on canvases and write tiles + geometry."""
    config = _config(config_path)
    try:
        manifest = pipeline.run_preprocess(config)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    click.echo(f"{len(manifest.pages)} pages -> {len(manifest.tiles)} tiles")


@main.group()
def index() -> None:
    """Index-related commands."""


@index.command("build")
@click.option("--config", "config_path", required=True, type=click.Path())
def index_build(config_path: str) -> None:
    """Extract embeddings and build the per-level search index."""
    config = _config(config_path)
    try:
        shards = pipeline.run_index_build(config)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    for k in sorted(shards):
        click.echo(f"P{k}: {shards[k].count} records")


@main.group(name="filter")
def filter_group() -> None:
    """NonText region-filter commands."""


@filter_group.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
def filter_train(config_path: str) -> None:
    """Train per-level NonText classifiers from annotated pages."""
    config = _config(config_path)
    try:
        summary = pipeline.run_filter_train(config)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    click.echo(json.dumps(summary, indent=1))


@filter_group.command("apply")
@click.option("--config", "config_path", required=True, type=click.Path())
def filter_apply(config_path: str) -> None:
    """Report how many cells the trained filters retain."""
    config = _config(config_path)
    try:
        stats = pipeline.run_filter_apply(config)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    click.echo(json.dumps(stats, indent=1))


@main.command()
@click.option("--query", "query_path", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--query-id", default=None, help="Identifier used in result lines.")
@click.option("--out", "out_dir", default=None, type=click.Path(), help="Write JSONL files here instead of stdout.")
def spot(query_path: str, config_path: str, query_id: str | None, out_dir: str | None) -> None:
    """Search one query image; emits detection and page-ranking JSON lines."""
    config = _config(config_path)
    try:
        engine = pipeline.Engine.load(config)
        query = pipeline.read_image(query_path)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    qid = query_id or Path(query_path).stem
    started = time.perf_counter()
    try:
        detections, pages = engine.spot(query, query_id=qid)
    except PspotError as e:
        _fail(e)
    elapsed = time.perf_counter() - started

    det_lines = [
        json.dumps(
            {
                "query_id": qid,
                "rank": d.rank,
                "page_id": d.page_id,
                "box": list(d.box),
                "score": d.score,
            }
        )
        for d in detections
    ]
    page_lines = [
        json.dumps(
            {"query_id": qid, "rank": n + 1, "page_id": h.page_id, "score": h.score}
        )
        for n, h in enumerate(pages)
    ]
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "detections.jsonl").write_text("\n".join(det_lines) + "\n" if det_lines else "")
        (out / "pages.jsonl").write_text("\n".join(page_lines) + "\n" if page_lines else "")
    else:
        for line in det_lines + page_lines:
            click.echo(line)
    click.echo(f"query {qid}: {elapsed:.3f}s wall time", err=True)


@main.command("eval")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_command(run_path: str, gt_path: str, out_path: str | None) -> None:
    """Score a detections run against JSON-lines ground truth."""
    try:
        run = evalkit.load_run(run_path)
        gt = evalkit.load_ground_truth(gt_path)
        report = evalkit.evaluate(run, gt)
    except PspotError as e:
        _fail(e)
    text = report.to_json()
    if out_path:
        Path(out_path).write_text(text)
        click.echo(
            f"mAP retrieval {report.map_retrieval:.4f}, "
            f"spotting {report.map_spotting:.4f} -> {out_path}"
        )
    else:
        click.echo(text)


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def report(report_path: str, out_dir: str) -> None:
    """Expand an evaluation report into CSV and a text summary."""
    rep = evalkit.EvalReport.from_json(Path(report_path).read_text())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evalkit.write_size_csv(rep, out / "per_query.csv")
    lines = [
        f"image retrieval mAP: {rep.map_retrieval:.4f}",
        f"pattern spotting mAP: {rep.map_spotting:.4f}",
        "",
        "category ranking (by spotting mAP):",
    ]
    for cat in rep.per_category:
        lines.append(
            f"  {cat['rank']:3d}. {cat['category']:<24} "
            f"spotting {cat['map_spotting']:.4f}  retrieval {cat['map_retrieval']:.4f}  "
            f"[{cat['tier']}]"
        )
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {out / 'per_query.csv'} and {out / 'summary.txt'}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--addr", default="127.0.0.1:8000", help="host:port to bind.")
def serve(config_path: str, addr: str) -> None:
    """Serve the online stage over HTTP."""
    import uvicorn

    from .service import create_app

    config = _config(config_path)
    try:
        engine = pipeline.Engine.load(config)
    except (PspotError, FileNotFoundError) as e:
        _fail(e)
    host, _, port = addr.partition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port or 8000))


if __name__ == "__main__":
    main()
