"""Command-line entry point: convert, export, validate, diff, filter,
stats, serve.

Exit codes: 0 success, 1 validation violations found, 2 I/O or argument
errors. Reports are line-oriented and stable for scripting.
"""
from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import adapters
from .errors import ReboundError
from .store import (
    diff_annotations,
    load_annotation_dir,
    load_log,
    save_log,
    validate_log,
    write_box_file,
)

DATASET_IDS = ("nuscenes", "argoverse", "waymo")

RANGE_BINS = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


def guarded(fn):
    """Map domain and I/O failures onto exit code 2."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ReboundError as exc:
            _fail(str(exc))
        except OSError as exc:
            _fail(f"{exc.filename or ''} {exc.strerror or exc}".strip())

    return wrapper


dataset_option = click.Choice(DATASET_IDS)


@click.group()
@click.version_option(package_name="rebound")
def main() -> None:
    """Convert, edit and re-export 3D bounding-box annotation logs."""


@main.command()
@click.option("--from", "dataset", type=dataset_option, required=True, help="source dataset schema")
@click.option("--input", "input_path", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--output", "output_path", type=click.Path(path_type=Path), required=True)
@guarded
def convert(dataset: str, input_path: Path, output_path: Path) -> None:
    """Import a dataset-style log and write it in the native format."""
    adapter = adapters.get(dataset)
    bundle = adapter.import_log(input_path)
    save_log(bundle, output_path)
    boxes = sum(len(v) for v in bundle.annotations.values())
    click.echo(f"converted {len(bundle.frames)} frames, {boxes} boxes -> {output_path}")


@main.command()
@click.option("--to", "dataset", type=dataset_option, required=True, help="target dataset schema")
@click.option("--input", "input_path", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--output", "output_path", type=click.Path(path_type=Path), required=True)
@guarded
def export(dataset: str, input_path: Path, output_path: Path) -> None:
    """Export a native log back to a dataset-style schema."""
    adapter = adapters.get(dataset)
    bundle = load_log(input_path)
    warnings_list = adapter.export_log(bundle, output_path)
    for line in warnings_list:
        click.echo(f"warning: {line}")
    boxes = sum(len(v) for v in bundle.annotations.values())
    click.echo(f"exported {len(bundle.frames)} frames, {boxes} boxes -> {output_path}")


@main.command()
@click.argument("log_root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@guarded
def validate(log_root: Path) -> None:
    """Check a native log against every format invariant."""
    violations = validate_log(log_root)
    for violation in violations:
        click.echo(violation.render())
    click.echo(f"{len(violations)} violations")
    if violations:
        sys.exit(1)


@main.command()
@click.argument("left", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("right", type=click.Path(exists=True, file_okay=False, path_type=Path))
@guarded
def diff(left: Path, right: Path) -> None:
    """Compare two annotation directories (per-frame box files)."""
    try:
        report = diff_annotations(load_annotation_dir(left), load_annotation_dir(right))
    except ValueError as exc:
        _fail(str(exc))
    for frame_id, box in report.added:
        click.echo(f"added {frame_id}/{box.instance_id} ({box.category})")
    for frame_id, box in report.removed:
        click.echo(f"removed {frame_id}/{box.instance_id} ({box.category})")
    for m in report.moved:
        dx, dy, dz = m.center_delta
        click.echo(
            f"moved {m.frame_id}/{m.instance_id} delta=({dx:.6g},{dy:.6g},{dz:.6g}) "
            f"rot={m.rotation_delta:.6g}rad"
        )
    for r in report.relabeled:
        click.echo(f"relabeled {r.frame_id}/{r.instance_id} {r.old_category} -> {r.new_category}")
    click.echo(report.summary())


@main.command("filter")
@click.option("--input", "input_path", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--output", "output_path", type=click.Path(path_type=Path), required=True)
@click.option("--prediction-set", "set_name", required=True)
@click.option("--min-confidence", type=float, default=0.5, show_default=True)
@guarded
def filter_cmd(input_path: Path, output_path: Path, set_name: str, min_confidence: float) -> None:
    """Write a prediction set pruned by confidence (threshold inclusive)."""
    if not (0.0 <= min_confidence <= 1.0):
        _fail(f"--min-confidence {min_confidence} outside [0, 1]")
    bundle = load_log(input_path)
    if set_name not in bundle.predictions:
        _fail(f"--prediction-set {set_name!r} not in log (has: {', '.join(sorted(bundle.predictions)) or 'none'})")
    total = kept = 0
    output_path.mkdir(parents=True, exist_ok=True)
    for frame in bundle.frames:
        boxes = bundle.predictions[set_name].get(frame.frame_id, [])
        surviving = [b for b in boxes if b.confidence is not None and b.confidence >= min_confidence]
        total += len(boxes)
        kept += len(surviving)
        write_box_file(output_path / f"{frame.frame_id}.json", surviving)
    click.echo(f"kept {kept} of {total} predictions -> {output_path}")


@main.command()
@click.argument("log_root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@guarded
def stats(log_root: Path) -> None:
    """Per-category box counts and an ego-distance histogram."""
    bundle = load_log(log_root)
    counts: dict[str, int] = {}
    distances: list[float] = []
    for boxes in bundle.annotations.values():
        for box in boxes:
            counts[box.category] = counts.get(box.category, 0) + 1
            distances.append(box.ego_distance())
    pred_counts: dict[str, int] = {}
    for set_name, per_frame in bundle.predictions.items():
        for boxes in per_frame.values():
            pred_counts[set_name] = pred_counts.get(set_name, 0) + len(boxes)
            for box in boxes:
                distances.append(box.ego_distance())

    click.echo(f"log {bundle.log_id}: {len(bundle.frames)} frames")
    for category in sorted(counts):
        click.echo(f"category {category}: {counts[category]}")
    for set_name in sorted(pred_counts):
        click.echo(f"prediction set {set_name}: {pred_counts[set_name]}")
    for lo, hi in zip(RANGE_BINS, RANGE_BINS[1:]):
        n = sum(1 for d in distances if lo <= d < hi)
        click.echo(f"range {lo}-{hi} m: {n}")
    overflow = sum(1 for d in distances if d >= RANGE_BINS[-1])
    click.echo(f"range {RANGE_BINS[-1]}+ m: {overflow}")


@main.command()
@click.option("--input", "data_root", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--frontend", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@guarded
def serve(data_root: Path, port: int, host: str, frontend: Path | None) -> None:
    """Start the HTTP annotation service."""
    import uvicorn

    from .service import create_app

    app = create_app(data_root, frontend_dir=frontend)
    click.echo(f"serving {data_root} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
