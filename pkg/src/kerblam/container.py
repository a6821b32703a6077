"""Container engine integration: probing, image builds, containerized runs.

The engine is driven through its own command-line interface (docker and
podman are interchangeable), never a daemon socket. Build contexts are
streamed as a tar on stdin with the recipe injected as ``Dockerfile`` and
all data, version-control, and runtime state filtered out, which keeps
images small and free of project data.
"""

from __future__ import annotations

import io
import os
import re
import shutil
import subprocess
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import (
    BuildFailed,
    EngineUnavailable,
    ExecutionFailed,
    ImagePullFailed,
    MountFailed,
)
from .manifest import DEFAULT_ENGINES, ProjectManifest, is_within

ENGINE_ENV_VAR = "KERBLAM_CONTAINER_ENGINE"
# Inside the container the project root is the fixed working directory.
ENV_PROJECT_ROOT = "KERBLAM_PROJECT_ROOT"
CONTAINER_WORKDIR = "/kerblam"
RECIPE_EXTENSION = ".dockerfile"
IMAGE_NAMESPACE = "kerblam"

_VCS_DIRS = {".git", ".hg", ".svn"}
_NAME_CHARS = re.compile(r"[^a-z0-9._-]+")
_LOG_EXCERPT = 4000


@dataclass(frozen=True)
class EngineHandle:
    """A container engine that answered the probe."""

    name: str
    executable: str


@dataclass(frozen=True)
class ImageRef:
    repository: str
    tag: str
    digest: str | None = None

    def __str__(self) -> str:
        ref = f"{self.repository}:{self.tag}"
        if self.digest:
            ref += f"@{self.digest}"
        return ref

    @classmethod
    def parse(cls, ref: str) -> "ImageRef":
        digest = None
        if "@" in ref:
            ref, digest = ref.split("@", 1)
        repository, _, tag = ref.rpartition(":")
        if not repository:
            repository, tag = ref, "latest"
        return cls(repository=repository, tag=tag, digest=digest)


def _probe(executable: str) -> bool:
    try:
        proc = subprocess.run(
            [executable, "version"],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            timeout=15,
        )
    except (OSError, subprocess.TimeoutExpired):
        return False
    return proc.returncode == 0


def detect_engine(preference: tuple[str, ...] | list[str] = DEFAULT_ENGINES) -> EngineHandle:
    """Pick the first preferred engine that exists and answers a probe.

    ``KERBLAM_CONTAINER_ENGINE`` overrides the preference list entirely.
    """
    override = os.environ.get(ENGINE_ENV_VAR)
    candidates = [override] if override else list(preference)
    for name in candidates:
        executable = shutil.which(name)
        if executable and _probe(executable):
            return EngineHandle(name=Path(name).name, executable=executable)
    tried = ", ".join(candidates)
    raise EngineUnavailable(f"no working container engine among: {tried}")


def _sanitize(component: str, fallback: str) -> str:
    cleaned = _NAME_CHARS.sub("-", component.lower()).strip("-._")
    return cleaned or fallback


def image_ref_for(manifest: ProjectManifest, workflow: str) -> ImageRef:
    """Deterministic, registry-legal name: kerblam/<project>:<workflow>."""
    return ImageRef(
        repository=f"{IMAGE_NAMESPACE}/{_sanitize(manifest.project_name, 'project')}",
        tag=_sanitize(workflow, "workflow"),
    )


def _context_excluded(rel: str, manifest: ProjectManifest) -> bool:
    top = rel.split("/", 1)[0]
    if top in _VCS_DIRS:
        return True
    if is_within(rel, manifest.data_dir):
        return True
    name = rel.rsplit("/", 1)[-1]
    if rel == ".kerblam.lock" or top == ".kerblam":
        return True
    return name.startswith(".kerblam_entry.")


def build_context_tar(
    manifest: ProjectManifest,
    recipe_text: str,
    extra_files: Mapping[str, bytes] | None = None,
) -> bytes:
    """Tar the filtered project root with the recipe injected as Dockerfile."""
    buffer = io.BytesIO()
    root = manifest.root
    with tarfile.open(fileobj=buffer, mode="w") as tar:
        for current, dirnames, filenames in os.walk(root):
            rel_dir = Path(current).relative_to(root).as_posix()
            dirnames[:] = sorted(
                d
                for d in dirnames
                if not _context_excluded(
                    d if rel_dir == "." else f"{rel_dir}/{d}", manifest
                )
            )
            for filename in sorted(filenames):
                rel = filename if rel_dir == "." else f"{rel_dir}/{filename}"
                if _context_excluded(rel, manifest):
                    continue
                tar.add(Path(current) / filename, arcname=rel, recursive=False)
        payloads = {"Dockerfile": recipe_text.encode("utf-8")}
        payloads.update(extra_files or {})
        for name, payload in payloads.items():
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(payload))
    return buffer.getvalue()


def build_image(
    engine: EngineHandle,
    recipe: Path,
    manifest: ProjectManifest,
    workflow: str,
    *,
    recipe_text: str | None = None,
    extra_files: Mapping[str, bytes] | None = None,
) -> ImageRef:
    """Build the per-workflow image from its recipe; returns its reference.

    ``recipe_text`` overrides the recipe file content (used when baking an
    entry point into a replay image); ``extra_files`` are added to the
    build context root.
    """
    if recipe_text is None:
        recipe_text = Path(recipe).read_text(encoding="utf-8")
    image = image_ref_for(manifest, workflow)
    context = build_context_tar(manifest, recipe_text, extra_files)
    proc = subprocess.run(
        [engine.executable, "build", "-t", str(image), "-"],
        input=context,
        capture_output=True,
    )
    log = (proc.stdout + proc.stderr).decode("utf-8", "replace")
    if proc.returncode != 0:
        raise BuildFailed(
            f"image build for workflow {workflow!r} failed "
            f"(status {proc.returncode}): {log[-_LOG_EXCERPT:]}",
            log=log,
        )
    return image


def _command_for_entry(entry: str) -> list[str]:
    if entry.endswith(".makefile"):
        return ["make", "-f", entry]
    return ["sh", entry]


def _mounts(manifest: ProjectManifest, entry: Path | None) -> list[tuple[str, str, bool]]:
    specs: list[tuple[str, str, bool]] = []
    for rel in (manifest.data_dir, manifest.input_dir, manifest.output_dir):
        host = manifest.root / rel
        try:
            host.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise MountFailed(f"cannot prepare mount source {host}: {exc}") from exc
        specs.append((str(host), f"{CONTAINER_WORKDIR}/{rel}", False))
    # Parents before children so nested binds resolve.
    specs.sort(key=lambda spec: spec[1].count("/"))
    if entry is not None:
        if not entry.is_file():
            raise MountFailed(f"entry file {entry} does not exist")
        specs.append((str(entry), f"{CONTAINER_WORKDIR}/{entry.name}", True))
    return specs


def run_in_container(
    engine: EngineHandle,
    image: ImageRef | str,
    manifest: ProjectManifest,
    entry: Path | None = None,
    env: Mapping[str, str] | None = None,
) -> int:
    """Run a workflow inside a container with project data bind-mounted.

    Data paths are mounted read-write at their project-relative locations
    under the fixed working directory; the entry file, when given, is
    mounted read-only and executed by kind. With no entry the image's
    default command runs (the replay path). The container is removed after
    exit; a nonzero status raises :class:`ExecutionFailed`.
    """
    command = [engine.executable, "run", "--rm", "--workdir", CONTAINER_WORKDIR]
    for host, dest, read_only in _mounts(manifest, entry):
        command += ["-v", f"{host}:{dest}" + (":ro" if read_only else "")]
    child_env = {ENV_PROJECT_ROOT: CONTAINER_WORKDIR}
    child_env.update(env or {})
    for key in sorted(child_env):
        command += ["-e", f"{key}={child_env[key]}"]
    command.append(str(image))
    if entry is not None:
        command += _command_for_entry(entry.name)
    proc = subprocess.run(command)
    if proc.returncode != 0:
        raise ExecutionFailed(proc.returncode, f"container {image}")
    return 0


def image_exists(engine: EngineHandle, image: ImageRef | str) -> bool:
    proc = subprocess.run(
        [engine.executable, "image", "inspect", str(image)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    return proc.returncode == 0


def pull_image(engine: EngineHandle, image: ImageRef | str) -> None:
    proc = subprocess.run([engine.executable, "pull", str(image)], capture_output=True)
    if proc.returncode != 0:
        detail = proc.stderr.decode("utf-8", "replace").strip()
        raise ImagePullFailed(f"cannot pull {image}: {detail[-500:]}")
