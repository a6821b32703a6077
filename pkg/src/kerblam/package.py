"""Replay packages: export a containerized workflow, re-execute it anywhere.

A replay package is a pair: a container image with the workflow entry
baked in as its default command, and a deterministic gzip tarball holding
``replay.toml`` plus every precious (local-only) input file under its
project-relative path. ``replay`` recreates the project layout in an empty
directory, verifies checksums, fetches remote inputs, and runs the image
with the standard data mounts.
"""

from __future__ import annotations

import hashlib
import json
import tarfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomlkit

from . import archive, container as container_mod, data as data_mod, workflow as workflow_mod
from .errors import (
    ChecksumMismatch,
    NoRecipe,
    RemoteFetchFailed,
    ReplayArchiveInvalid,
    TargetNotEmpty,
    UnsupportedFormatVersion,
)
from .manifest import (
    MANIFEST_NAME,
    ExecutionOptions,
    ProjectManifest,
    RemoteSource,
    is_within,
    normalize_relpath,
    serialize_manifest,
)

REPLAY_MANIFEST_NAME = "replay.toml"
REPLAY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PreciousFile:
    path: str  # project-relative
    sha256: str


@dataclass
class ReplayManifest:
    """Contents of a replay package, as stored in ``replay.toml``."""

    image: str
    workflow: str
    workflow_kind: str
    created: str
    format_version: int = REPLAY_FORMAT_VERSION
    data_dir: str = "data"
    input_dir: str = "data/in"
    output_dir: str = "data/out"
    precious_files: list[PreciousFile] = field(default_factory=list)
    remote_files: dict[str, RemoteSource] = field(default_factory=dict)

    def to_toml(self) -> str:
        doc: dict[str, Any] = {
            "package": {
                "format_version": self.format_version,
                "image": self.image,
                "workflow": self.workflow,
                "workflow_kind": self.workflow_kind,
                "created": self.created,
            },
            "layout": {
                "dir": self.data_dir,
                "input": self.input_dir,
                "output": self.output_dir,
            },
        }
        if self.precious_files:
            doc["precious"] = {p.path: p.sha256 for p in self.precious_files}
        if self.remote_files:
            remote: dict[str, Any] = {}
            for key in sorted(self.remote_files):
                source = self.remote_files[key]
                if source.sha256 is None:
                    remote[key] = source.url
                else:
                    remote[key] = {"url": source.url, "sha256": source.sha256}
            doc["remote"] = remote
        return tomlkit.dumps(doc)

    @classmethod
    def from_toml(cls, text: str) -> "ReplayManifest":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ReplayArchiveInvalid(f"malformed {REPLAY_MANIFEST_NAME}: {exc}") from exc
        package = doc.get("package")
        if not isinstance(package, dict):
            raise ReplayArchiveInvalid(f"{REPLAY_MANIFEST_NAME} lacks a [package] table")
        version = package.get("format_version")
        if version != REPLAY_FORMAT_VERSION:
            raise UnsupportedFormatVersion(
                f"replay package format {version!r} is not supported"
            )
        layout = doc.get("layout", {})
        manifest = cls(
            image=str(package.get("image", "")),
            workflow=str(package.get("workflow", "")),
            workflow_kind=str(package.get("workflow_kind", "")),
            created=str(package.get("created", "")),
            data_dir=str(layout.get("dir", "data")),
            input_dir=str(layout.get("input", "data/in")),
            output_dir=str(layout.get("output", "data/out")),
        )
        if not manifest.image or manifest.workflow_kind not in ("makefile", "shell"):
            raise ReplayArchiveInvalid(f"{REPLAY_MANIFEST_NAME} is incomplete")
        for raw_path, sha in doc.get("precious", {}).items():
            path = normalize_relpath(raw_path, f"precious.{raw_path}")
            if not is_within(path, manifest.input_dir):
                raise ReplayArchiveInvalid(
                    f"precious entry {path!r} is outside {manifest.input_dir!r}"
                )
            if not isinstance(sha, str) or len(sha) != 64:
                raise ReplayArchiveInvalid(f"precious entry {path!r} has a bad digest")
            manifest.precious_files.append(PreciousFile(path, sha.lower()))
        for raw_key, value in doc.get("remote", {}).items():
            key = normalize_relpath(raw_key, f"remote.{raw_key}")
            if isinstance(value, str):
                manifest.remote_files[key] = RemoteSource(url=value)
            elif isinstance(value, dict) and isinstance(value.get("url"), str):
                manifest.remote_files[key] = RemoteSource(
                    url=value["url"], sha256=value.get("sha256")
                )
            else:
                raise ReplayArchiveInvalid(f"bad remote entry {key!r}")
        return manifest


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _content_timestamp(root: Path, members: list[str]) -> str:
    """UTC timestamp derived from content mtimes, so unchanged trees
    produce identical packages."""
    newest = 0.0
    for rel in [MANIFEST_NAME, *members]:
        path = root / rel
        if path.exists():
            newest = max(newest, path.stat().st_mtime)
    stamp = datetime.fromtimestamp(int(newest), tz=timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


def package(
    manifest: ProjectManifest,
    workflow: str | None = None,
    dest: Path | str | None = None,
) -> tuple[container_mod.ImageRef, Path]:
    """Build the preconfigured image and write the replay tarball.

    The image gets the workflow entry baked in as its default command; the
    tarball carries ``replay.toml`` and the precious inputs. An empty
    precious set is valid (the tarball then only holds the manifest).
    """
    descriptor = workflow_mod.select_workflow(manifest, workflow)
    if descriptor.recipe is None:
        raise NoRecipe(f"workflow {descriptor.name!r} has no container recipe")
    engine = container_mod.detect_engine(manifest.execution.engines)

    entry = workflow_mod.entry_name(descriptor.kind)
    entry_bytes = (manifest.root / descriptor.source).read_bytes()
    recipe_text = (manifest.root / descriptor.recipe).read_text(encoding="utf-8")
    command = workflow_mod.entry_command(descriptor.kind, entry)
    baked_recipe = (
        recipe_text.rstrip("\n")
        + f"\nCOPY {entry} {container_mod.CONTAINER_WORKDIR}/{entry}"
        + f"\nWORKDIR {container_mod.CONTAINER_WORKDIR}"
        + f"\nCMD {json.dumps(command)}\n"
    )
    image = container_mod.build_image(
        engine,
        manifest.root / descriptor.recipe,
        manifest,
        descriptor.name,
        recipe_text=baked_recipe,
        extra_files={entry: entry_bytes},
    )

    precious = [
        record
        for record in data_mod.list_records(manifest)
        if record.fragility == "precious" and not record.is_symlink
    ]
    members = sorted(record.path for record in precious)
    replay_manifest = ReplayManifest(
        image=str(image),
        workflow=descriptor.name,
        workflow_kind=descriptor.kind,
        created=_content_timestamp(manifest.root, [descriptor.source, *members]),
        data_dir=manifest.data_dir,
        input_dir=manifest.input_dir,
        output_dir=manifest.output_dir,
        precious_files=[
            PreciousFile(path, _sha256_file(manifest.root / path)) for path in members
        ],
        remote_files=dict(manifest.remote_files),
    )
    if dest is None:
        dest = manifest.root / f"{descriptor.name}.replay.tar.gz"
    archive.write_archive(
        Path(dest),
        manifest.root,
        members,
        extra={REPLAY_MANIFEST_NAME: replay_manifest.to_toml().encode("utf-8")},
    )
    return image, Path(dest)


def _read_replay_archive(archive_path: Path) -> tuple[ReplayManifest, dict[str, bytes]]:
    """Read and structurally validate a replay tarball into memory."""
    payloads: dict[str, bytes] = {}
    try:
        with tarfile.open(archive_path, mode="r:gz") as tar:
            for member in tar:
                name = member.name
                if name.startswith("/") or ".." in name.split("/"):
                    raise ReplayArchiveInvalid(f"unsafe archive member {name!r}")
                if not member.isfile():
                    raise ReplayArchiveInvalid(f"non-file archive member {name!r}")
                fh = tar.extractfile(member)
                assert fh is not None
                payloads[name] = fh.read()
    except tarfile.TarError as exc:
        raise ReplayArchiveInvalid(f"unreadable replay archive: {exc}") from exc
    if REPLAY_MANIFEST_NAME not in payloads:
        raise ReplayArchiveInvalid(f"archive lacks {REPLAY_MANIFEST_NAME}")
    manifest = ReplayManifest.from_toml(payloads.pop(REPLAY_MANIFEST_NAME).decode("utf-8"))
    declared = {p.path for p in manifest.precious_files}
    unexpected = set(payloads) - declared
    if unexpected:
        raise ReplayArchiveInvalid(f"undeclared archive members: {sorted(unexpected)}")
    missing = declared - set(payloads)
    if missing:
        raise ReplayArchiveInvalid(f"declared files missing from archive: {sorted(missing)}")
    return manifest, payloads


def replay(
    archive_path: Path | str,
    workdir: Path | str,
    engine: container_mod.EngineHandle | None = None,
    transport: data_mod.Transport | None = None,
) -> int:
    """Re-execute a replay package from scratch in an empty directory.

    Recreates the original layout, extracts and checksum-verifies precious
    inputs (refusing to run on any mismatch), fetches remote inputs, pulls
    the image if absent, and runs it with the standard mounts. Returns 0;
    a nonzero container raises :class:`ExecutionFailed`.
    """
    workdir = Path(workdir)
    if workdir.exists():
        if not workdir.is_dir() or any(workdir.iterdir()):
            raise TargetNotEmpty(f"replay target {workdir} is not an empty directory")
    else:
        workdir.mkdir(parents=True)

    replay_manifest, payloads = _read_replay_archive(Path(archive_path))
    for precious in replay_manifest.precious_files:
        digest = hashlib.sha256(payloads[precious.path]).hexdigest()
        if digest != precious.sha256:
            raise ChecksumMismatch(precious.path, "archive content was altered")

    project = ProjectManifest(
        root=workdir,
        data_dir=replay_manifest.data_dir,
        input_dir=replay_manifest.input_dir,
        output_dir=replay_manifest.output_dir,
        remote_files=dict(replay_manifest.remote_files),
        execution=ExecutionOptions(),
    )
    for rel in (project.data_dir, project.input_dir, project.output_dir):
        (workdir / rel).mkdir(parents=True, exist_ok=True)
    for precious in replay_manifest.precious_files:
        target = workdir / precious.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payloads[precious.path])
    (workdir / MANIFEST_NAME).write_text(serialize_manifest(project), encoding="utf-8")

    if project.remote_files:
        report = data_mod.fetch(project, transport=transport)
        if not report.ok:
            failures = ", ".join(
                f"{o.path} ({o.detail})" for o in report.outcomes if o.action == "failed"
            )
            raise RemoteFetchFailed(f"could not fetch remote inputs: {failures}")

    if engine is None:
        engine = container_mod.detect_engine(project.execution.engines)
    if not container_mod.image_exists(engine, replay_manifest.image):
        container_mod.pull_image(engine, replay_manifest.image)
    return container_mod.run_in_container(engine, replay_manifest.image, project, entry=None)
