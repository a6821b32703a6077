"""Command-line entry point: one command per capability, stable exit codes.

Exit codes: 0 success, 1 domain errors, 2 usage errors; workflow and
container child failures propagate the child's status when it is in 1-125
and map to 1 otherwise. ``--json`` switches every command to one
machine-readable report object on stdout, with errors on stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import census as census_mod
from . import data as data_mod
from . import package as package_mod
from . import workflow as workflow_mod
from .errors import ExecutionFailed, KerblamError
from .manifest import ProjectManifest, find_project, load_manifest
from .scaffold import scaffold_new

# Deleting more than this without --yes requires interactive confirmation.
CONFIRM_THRESHOLD_BYTES = 1 << 30


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ExecutionFailed as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.status if 1 <= exc.status <= 125 else 1)
        except KerblamError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _project_manifest() -> ProjectManifest:
    return load_manifest(find_project(Path.cwd()))


def _json_mode(ctx: click.Context) -> bool:
    return bool(ctx.obj and ctx.obj.get("json"))


def _emit_json(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _human_size(size: int) -> str:
    value = float(size)
    for unit in ("B", "KiB", "MiB", "GiB", "TiB"):
        if value < 1024 or unit == "TiB":
            return f"{value:.1f} {unit}" if unit != "B" else f"{int(value)} B"
        value /= 1024
    return f"{int(size)} B"


@click.group()
@click.option("--json", "json_mode", is_flag=True, help="Emit machine-readable JSON reports.")
@click.pass_context
def main(ctx: click.Context, json_mode: bool) -> None:
    """Manage data-analysis projects: data, workflows, containers, replays."""
    ctx.obj = {"json": json_mode}


@main.command()
@click.argument("path", type=click.Path(path_type=Path))
@click.option("--name", default=None, help="Project name (defaults to the directory name).")
@click.pass_context
@handle_errors
def new(ctx: click.Context, path: Path, name: str | None) -> None:
    """Scaffold a new project skeleton in an absent or empty directory."""
    created = scaffold_new(path, project_name=name)
    if _json_mode(ctx):
        _emit_json({"path": str(path), "created": created})
    else:
        click.echo(f"created project at {path}")
        for rel in created:
            click.echo(f"  {rel}")


@main.command()
@click.pass_context
@handle_errors
def fetch(ctx: click.Context) -> None:
    """Retrieve every declared remote input file."""
    manifest = _project_manifest()
    report = data_mod.fetch(manifest)
    if _json_mode(ctx):
        _emit_json(
            {
                "ok": report.ok,
                "files": [
                    {"path": o.path, "action": o.action, "detail": o.detail}
                    for o in report.outcomes
                ],
            }
        )
    else:
        if not report.outcomes:
            click.echo("no remote files declared")
        for outcome in report.outcomes:
            detail = f" ({outcome.detail})" if outcome.detail else ""
            click.echo(f"{outcome.action:8} {outcome.path}{detail}")
    if not report.ok:
        sys.exit(1)


@main.group(invoke_without_command=True)
@click.pass_context
@handle_errors
def data(ctx: click.Context) -> None:
    """Show data statistics; subcommands clean or pack data files."""
    if ctx.invoked_subcommand is not None:
        return
    manifest = _project_manifest()
    stats = data_mod.stats(manifest)
    if _json_mode(ctx):
        _emit_json(
            {
                "buckets": [
                    {
                        "role": role,
                        "fragility": fragility,
                        "files": bucket.files,
                        "bytes": bucket.bytes,
                    }
                    for (role, fragility), bucket in sorted(stats.buckets.items())
                ],
                "total_files": stats.total_files,
                "total_bytes": stats.total_bytes,
                "missing_remote": stats.missing_remote,
                "errors": [list(e) for e in stats.errors],
            }
        )
    else:
        click.echo(f"{'role':<14}{'fragility':<11}{'files':>6}  size")
        for (role, fragility), bucket in sorted(stats.buckets.items()):
            click.echo(
                f"{role:<14}{fragility:<11}{bucket.files:>6}  {_human_size(bucket.bytes)}"
            )
        click.echo(
            f"{'total':<25}{stats.total_files:>6}  {_human_size(stats.total_bytes)}"
        )
        if stats.missing_remote:
            click.echo(f"declared but not fetched: {len(stats.missing_remote)}")
            for path in stats.missing_remote:
                click.echo(f"  {path}")
        for path, message in stats.errors:
            click.echo(f"unreadable: {path}: {message}", err=True)
    if stats.errors:
        sys.exit(1)


@data.command()
@click.option("--keep-remote", is_flag=True, help="Keep on-disk remote inputs.")
@click.option("--dry-run", is_flag=True, help="List deletions without touching files.")
@click.option("--yes", is_flag=True, help="Skip the large-deletion confirmation.")
@click.pass_context
@handle_errors
def clean(ctx: click.Context, keep_remote: bool, dry_run: bool, yes: bool) -> None:
    """Delete fragile data files (intermediates, outputs, remote inputs)."""
    manifest = _project_manifest()
    preview = data_mod.clean(manifest, keep_remote=keep_remote, dry_run=True)
    if not dry_run and not yes:
        doomed_bytes = 0
        for rel in preview.deleted:
            try:
                doomed_bytes += (manifest.root / rel).stat().st_size
            except OSError:
                pass
        if doomed_bytes > CONFIRM_THRESHOLD_BYTES:
            prompt = f"delete {len(preview.deleted)} files ({_human_size(doomed_bytes)})?"
            if not sys.stdin.isatty():
                click.echo("error: deletion exceeds 1 GiB; rerun with --yes", err=True)
                sys.exit(1)
            click.confirm(prompt, abort=True)
    report = preview if dry_run else data_mod.clean(manifest, keep_remote=keep_remote)
    if _json_mode(ctx):
        _emit_json(
            {
                "dry_run": dry_run,
                "deleted": report.deleted,
                "errors": [list(e) for e in report.errors],
            }
        )
    else:
        verb = "would delete" if dry_run else "deleted"
        for rel in report.deleted:
            click.echo(f"{verb} {rel}")
        click.echo(f"{verb} {len(report.deleted)} files")
        for path, message in report.errors:
            click.echo(f"failed: {path}: {message}", err=True)
    if report.errors:
        sys.exit(1)


@data.command()
@click.argument("selection", type=click.Choice(["precious", "output"]), default="precious")
@click.option(
    "--output",
    "output_path",
    type=click.Path(path_type=Path),
    default=None,
    help="Archive path (default <selection>.tar.gz in the project root).",
)
@click.pass_context
@handle_errors
def pack(ctx: click.Context, selection: str, output_path: Path | None) -> None:
    """Export precious inputs or output data as a deterministic tarball."""
    manifest = _project_manifest()
    dest = output_path or manifest.root / f"{selection}.tar.gz"
    archive_path = data_mod.pack(manifest, selection, dest)
    if _json_mode(ctx):
        _emit_json({"selection": selection, "archive": str(archive_path)})
    else:
        click.echo(f"packed {selection} data into {archive_path}")


@main.command()
@click.argument("workflow", required=False)
@click.option("--profile", default=None, help="Input data profile to apply for this run.")
@click.option("--container", "containerized", is_flag=True, help="Run inside a container.")
@click.pass_context
@handle_errors
def run(ctx: click.Context, workflow: str | None, profile: str | None, containerized: bool) -> None:
    """Execute a workflow at the project root (optionally containerized)."""
    manifest = _project_manifest()
    descriptor = workflow_mod.select_workflow(manifest, workflow)
    status = workflow_mod.run(
        manifest, descriptor.name, profile=profile, containerized=containerized
    )
    if _json_mode(ctx):
        _emit_json({"workflow": descriptor.name, "profile": profile, "status": status})
    else:
        click.echo(f"workflow {descriptor.name!r} finished")


@main.command(name="package")
@click.argument("workflow", required=False)
@click.option(
    "--output",
    "output_path",
    type=click.Path(path_type=Path),
    default=None,
    help="Replay tarball path (default <workflow>.replay.tar.gz in the project root).",
)
@click.pass_context
@handle_errors
def package_cmd(ctx: click.Context, workflow: str | None, output_path: Path | None) -> None:
    """Export a workflow as a replay package (image + tarball)."""
    manifest = _project_manifest()
    image, archive_path = package_mod.package(manifest, workflow, dest=output_path)
    if _json_mode(ctx):
        _emit_json({"image": str(image), "archive": str(archive_path)})
    else:
        click.echo(f"image   {image}")
        click.echo(f"tarball {archive_path}")


@main.command()
@click.argument("archive", type=click.Path(exists=True, path_type=Path))
@click.argument("directory", type=click.Path(path_type=Path))
@click.pass_context
@handle_errors
def replay(ctx: click.Context, archive: Path, directory: Path) -> None:
    """Re-execute a replay package in an empty directory."""
    status = package_mod.replay(archive, directory)
    if _json_mode(ctx):
        _emit_json({"directory": str(directory), "status": status})
    else:
        click.echo(f"replay finished in {directory}")


@main.command()
@click.argument("sources", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--min-count", default=census_mod.DEFAULT_MIN_COUNT, show_default=True,
              help="Drop paths seen in fewer templates than this.")
@click.option("--format", "fmt", type=click.Choice(["json", "dot", "csv"]), default="json",
              show_default=True, help="Output document format.")
@click.option("--exclude", "excludes", multiple=True,
              help="Housekeeping glob to strip (replaces the default set).")
@click.option("--stats", "show_stats", is_flag=True,
              help="Report uniqueness statistics (before thresholding) instead of the tree.")
@click.pass_context
@handle_errors
def census(
    ctx: click.Context,
    sources: tuple[Path, ...],
    min_count: int,
    fmt: str,
    excludes: tuple[str, ...],
    show_stats: bool,
) -> None:
    """Merge template trees or listing files into a path-frequency census.

    Each SOURCE is a template root directory or a listing file
    (one F<TAB>path or D<TAB>path entry per line).
    """
    exclusions = excludes or census_mod.DEFAULT_EXCLUSIONS
    listings = []
    for source in sources:
        if source.is_dir():
            listing = census_mod.scan_tree(source, template_id=str(source))
        else:
            listing = census_mod.read_listing(source, template_id=str(source))
        listings.append(census_mod.strip_housekeeping(listing, exclusions))
    tree = census_mod.merge(listings)
    if show_stats:
        stats = census_mod.uniqueness(tree)
        payload = {
            "templates": tree.template_count,
            "total_entries": stats.total_entries,
            "unique_entries": stats.unique_entries,
            "total_dirs": stats.total_dirs,
            "unique_dirs": stats.unique_dirs,
        }
        if _json_mode(ctx):
            _emit_json(payload)
        else:
            for key, value in payload.items():
                click.echo(f"{key}: {value}")
        return
    tree = census_mod.threshold(tree, min_count)
    if _json_mode(ctx):
        fmt = "json"
    click.echo(census_mod.emit(tree, fmt), nl=False)


if __name__ == "__main__":
    main()
