"""Data classification and lifecycle commands: stats, fetch, clean, pack.

Every file under the data directory gets exactly one role from its
location (input, intermediate, or output) and a fragility: local-only
inputs are *precious* and never deleted, everything else is *fragile* and
recreatable. Symlinks are never followed, never deleted, and counted as
zero-size entries.
"""

from __future__ import annotations

import hashlib
import os
import posixpath
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal

import requests

from . import archive
from .errors import NothingToPack, OutsideDataDir
from .manifest import ProjectManifest, is_within

Role = Literal["input", "intermediate", "output"]
Fragility = Literal["precious", "fragile"]
Locality = Literal["remote", "local"]

ROLE_INPUT: Role = "input"
ROLE_INTERMEDIATE: Role = "intermediate"
ROLE_OUTPUT: Role = "output"

FETCH_CONCURRENCY = 4
_PART_SUFFIX = ".kerblam_part"

# (url, destination) -> writes retrieved bytes to destination.
Transport = Callable[[str, Path], None]


@dataclass(frozen=True)
class DataFileRecord:
    """One data file: project-relative path plus its taxonomy and size."""

    path: str
    role: Role
    locality: Locality
    fragility: Fragility
    size: int
    is_symlink: bool = False


@dataclass
class Bucket:
    files: int = 0
    bytes: int = 0


@dataclass
class DataStats:
    """Per-(role, fragility) file counts and sizes, plus grand totals."""

    buckets: dict[tuple[Role, Fragility], Bucket] = field(default_factory=dict)
    total_files: int = 0
    total_bytes: int = 0
    missing_remote: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class FetchOutcome:
    path: str
    action: Literal["fetched", "skipped", "failed"]
    detail: str | None = None


@dataclass
class FetchReport:
    outcomes: list[FetchOutcome] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(o.action != "failed" for o in self.outcomes)


@dataclass
class CleanReport:
    deleted: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)
    dry_run: bool = False

    @property
    def ok(self) -> bool:
        return not self.errors


def _relative_to_root(path: Path | str, manifest: ProjectManifest) -> str:
    p = Path(path)
    if p.is_absolute():
        try:
            rel = p.relative_to(manifest.root)
        except ValueError:
            raise OutsideDataDir(f"{path!s} is outside the project root")
        return rel.as_posix()
    return posixpath.normpath(p.as_posix())


def classify_relpath(rel: str, manifest: ProjectManifest) -> tuple[Role, Locality, Fragility]:
    """Taxonomy for a project-relative path; raises OutsideDataDir."""
    if not is_within(rel, manifest.data_dir):
        raise OutsideDataDir(f"{rel!r} is not under {manifest.data_dir!r}")
    if is_within(rel, manifest.input_dir):
        role: Role = ROLE_INPUT
        input_rel = posixpath.relpath(rel, manifest.input_dir)
        locality: Locality = "remote" if input_rel in manifest.remote_files else "local"
    elif is_within(rel, manifest.output_dir):
        role, locality = ROLE_OUTPUT, "local"
    else:
        role, locality = ROLE_INTERMEDIATE, "local"
    fragility: Fragility = (
        "precious" if role == ROLE_INPUT and locality == "local" else "fragile"
    )
    return role, locality, fragility


def classify(path: Path | str, manifest: ProjectManifest) -> DataFileRecord:
    """Classify one existing data file, reading its size from disk."""
    rel = _relative_to_root(path, manifest)
    role, locality, fragility = classify_relpath(rel, manifest)
    st = os.lstat(manifest.root / rel)
    is_symlink = os.path.islink(manifest.root / rel)
    return DataFileRecord(
        path=rel,
        role=role,
        locality=locality,
        fragility=fragility,
        size=0 if is_symlink else st.st_size,
        is_symlink=is_symlink,
    )


def _walk_records(
    manifest: ProjectManifest, errors: list[tuple[str, str]]
) -> Iterable[DataFileRecord]:
    """Yield a record per entry under data_dir, depth-first, sorted names."""

    def scan(directory: Path) -> Iterable[DataFileRecord]:
        try:
            entries = sorted(os.scandir(directory), key=lambda e: e.name)
        except OSError as exc:
            errors.append((str(directory), str(exc)))
            return
        for entry in entries:
            rel = (Path(directory) / entry.name).relative_to(manifest.root).as_posix()
            try:
                if entry.is_symlink():
                    role, locality, fragility = classify_relpath(rel, manifest)
                    yield DataFileRecord(rel, role, locality, fragility, 0, True)
                elif entry.is_dir(follow_symlinks=False):
                    yield from scan(Path(directory) / entry.name)
                elif entry.is_file(follow_symlinks=False):
                    role, locality, fragility = classify_relpath(rel, manifest)
                    size = entry.stat(follow_symlinks=False).st_size
                    yield DataFileRecord(rel, role, locality, fragility, size, False)
            except OSError as exc:
                errors.append((rel, str(exc)))

    data_path = manifest.data_path
    if data_path.is_dir():
        yield from scan(data_path)


def list_records(manifest: ProjectManifest) -> list[DataFileRecord]:
    errors: list[tuple[str, str]] = []
    records = list(_walk_records(manifest, errors))
    if errors:
        raise OSError("; ".join(f"{p}: {m}" for p, m in errors))
    return records


def stats(manifest: ProjectManifest) -> DataStats:
    """Count files and bytes per taxonomy bucket; absent data dir is all-zero."""
    result = DataStats()
    for record in _walk_records(manifest, result.errors):
        bucket = result.buckets.setdefault((record.role, record.fragility), Bucket())
        bucket.files += 1
        bucket.bytes += record.size
        result.total_files += 1
        result.total_bytes += record.size
    for key in sorted(manifest.remote_files):
        if not (manifest.input_path / key).exists():
            result.missing_remote.append(key)
    return result


def default_transport(url: str, dest: Path) -> None:
    """Stream an HTTP(S) GET to ``dest``, following at most 5 redirects."""
    with requests.Session() as session:
        session.max_redirects = 5
        with session.get(url, stream=True, timeout=60, allow_redirects=True) as resp:
            resp.raise_for_status()
            with open(dest, "wb") as fh:
                for chunk in resp.iter_content(chunk_size=1 << 16):
                    fh.write(chunk)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fetch_one(manifest: ProjectManifest, key: str, transport: Transport) -> FetchOutcome:
    source = manifest.remote_files[key]
    dest = manifest.input_path / key
    if dest.is_file() and source.sha256 and _sha256_file(dest) == source.sha256:
        return FetchOutcome(key, "skipped", "checksum already matches")
    dest.parent.mkdir(parents=True, exist_ok=True)
    # Download next to the destination and rename, so a failed transfer
    # never leaves a half-written input behind.
    part = dest.with_name(dest.name + _PART_SUFFIX)
    try:
        transport(source.url, part)
        if source.sha256 and _sha256_file(part) != source.sha256:
            return FetchOutcome(key, "failed", "checksum mismatch")
        os.replace(part, dest)
        return FetchOutcome(key, "fetched", None)
    except Exception as exc:  # noqa: BLE001 - reported per file
        return FetchOutcome(key, "failed", str(exc))
    finally:
        part.unlink(missing_ok=True)


def fetch(
    manifest: ProjectManifest,
    transport: Transport | None = None,
    max_workers: int = FETCH_CONCURRENCY,
) -> FetchReport:
    """Retrieve every declared remote input to its input-relative destination.

    Files whose declared sha256 already matches on-disk content are skipped.
    Independent files are fetched concurrently; the report is ordered by
    path regardless of completion order.
    """
    transport = transport or default_transport
    keys = sorted(manifest.remote_files)
    report = FetchReport()
    if not keys:
        return report
    workers = max(1, min(max_workers, len(keys)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_fetch_one, manifest, key, transport) for key in keys]
        report.outcomes = [f.result() for f in futures]
    return report


def clean(
    manifest: ProjectManifest, keep_remote: bool = False, dry_run: bool = False
) -> CleanReport:
    """Delete fragile data files; precious files are never touched.

    ``keep_remote`` also retains on-disk remote inputs; ``dry_run`` reports
    the same path list without changing the filesystem. Directories emptied
    by the deletions are pruned, except the data, input, and output roots.
    """
    report = CleanReport(dry_run=dry_run)
    walk_errors: list[tuple[str, str]] = []
    doomed: list[str] = []
    for record in _walk_records(manifest, walk_errors):
        if record.is_symlink or record.fragility == "precious":
            continue
        if keep_remote and record.role == ROLE_INPUT and record.locality == "remote":
            continue
        doomed.append(record.path)
    report.errors.extend(walk_errors)
    doomed.sort()
    if dry_run:
        report.deleted = doomed
        return report

    protected = {manifest.data_dir, manifest.input_dir, manifest.output_dir}
    affected_dirs: set[str] = set()
    for rel in doomed:
        try:
            (manifest.root / rel).unlink()
        except OSError as exc:
            report.errors.append((rel, str(exc)))
            continue
        report.deleted.append(rel)
        parent = posixpath.dirname(rel)
        while parent and is_within(parent, manifest.data_dir) and parent not in protected:
            affected_dirs.add(parent)
            parent = posixpath.dirname(parent)
    # Deepest first, so a child removal can empty its parent.
    for rel in sorted(affected_dirs, key=lambda p: p.count("/"), reverse=True):
        try:
            os.rmdir(manifest.root / rel)
        except OSError:
            pass  # not empty, or already gone
    return report


def pack(
    manifest: ProjectManifest,
    selection: Literal["precious", "output"],
    dest: Path | str,
) -> Path:
    """Archive the selected files under their project-relative paths.

    The archive is a deterministic gzip tarball: repeated packs of an
    unchanged tree are byte-identical. Symlinks are not packed.
    """
    if selection not in ("precious", "output"):
        raise ValueError(f"unknown pack selection {selection!r}")
    members: list[str] = []
    for record in list_records(manifest):
        if record.is_symlink:
            continue
        if selection == "precious" and record.fragility == "precious":
            members.append(record.path)
        elif selection == "output" and record.role == ROLE_OUTPUT:
            members.append(record.path)
    if not members:
        raise NothingToPack(f"no {selection} files under {manifest.data_dir!r}")
    return archive.write_archive(Path(dest), manifest.root, sorted(members))
