"""Workflow discovery, root materialization, input profiles, and execution.

Workflows live under the workflows directory as ``*.makefile`` or ``*.sh``
files and are copied to the project root under a reserved entry name just
before execution, then removed on every exit path. Input profiles swap
input files in place through a journal persisted to disk before the first
rename, so an interrupted run can always be rolled back.
"""

from __future__ import annotations

import os
import shutil
import subprocess
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from . import container as container_mod
from .errors import (
    DuplicateWorkflowName,
    ExecutionFailed,
    JournalCorrupt,
    NoRecipe,
    ProfileFileMissing,
    ProjectLocked,
    SwapAlreadyApplied,
    UnknownProfile,
    WorkflowNotFound,
)
from .manifest import ProjectManifest

KIND_BY_EXTENSION = {".makefile": "makefile", ".sh": "shell"}
ENTRY_STEM = ".kerblam_entry"
LOCK_NAME = ".kerblam.lock"
STATE_DIR = ".kerblam"
JOURNAL_NAME = "swap_journal"
JOURNAL_HEADER = "kerblam-swap-journal v1"

ENV_PROJECT_ROOT = container_mod.ENV_PROJECT_ROOT
ENV_PROFILE = "KERBLAM_PROFILE"


@dataclass(frozen=True)
class WorkflowDescriptor:
    """A runnable pipeline: stem name, kind, source path, optional recipe."""

    name: str
    kind: str  # "makefile" | "shell"
    source: str  # project-relative
    recipe: str | None = None  # project-relative


@dataclass(frozen=True)
class SwapEntry:
    original: str  # project-relative
    replacement: str
    holding: str


@dataclass
class SwapJournal:
    root: Path
    entries: list[SwapEntry]
    state: str  # "applied" | "reverted"

    @property
    def path(self) -> Path:
        return journal_path(self.root)


def journal_path(root: Path) -> Path:
    return root / STATE_DIR / JOURNAL_NAME


def entry_name(kind: str) -> str:
    extension = {v: k for k, v in KIND_BY_EXTENSION.items()}[kind]
    return f"{ENTRY_STEM}{extension}"


def entry_command(kind: str, entry: str) -> list[str]:
    if kind == "makefile":
        return ["make", "-f", entry]
    return ["sh", entry]


def discover_workflows(manifest: ProjectManifest) -> list[WorkflowDescriptor]:
    """List workflows under the workflows dir, sorted by name.

    Only the two recognized extensions are picked up; a recipe with the
    same stem under the recipes dir is attached when present.
    """
    directory = manifest.workflows_path
    if not directory.is_dir():
        return []
    found: dict[str, WorkflowDescriptor] = {}
    for item in sorted(directory.iterdir(), key=lambda p: p.name):
        if not item.is_file():
            continue
        kind = KIND_BY_EXTENSION.get(item.suffix)
        if kind is None:
            continue
        name = item.stem
        if name in found:
            raise DuplicateWorkflowName(
                f"workflows {found[name].source!r} and "
                f"{(Path(manifest.workflows_dir) / item.name).as_posix()!r} "
                f"share the name {name!r}"
            )
        recipe_rel = f"{manifest.recipes_dir}/{name}{container_mod.RECIPE_EXTENSION}"
        recipe = recipe_rel if (manifest.root / recipe_rel).is_file() else None
        source = (Path(manifest.workflows_dir) / item.name).as_posix()
        found[name] = WorkflowDescriptor(name=name, kind=kind, source=source, recipe=recipe)
    return [found[name] for name in sorted(found)]


def select_workflow(manifest: ProjectManifest, name: str | None = None) -> WorkflowDescriptor:
    """Resolve a workflow by name, manifest default, or uniqueness."""
    workflows = discover_workflows(manifest)
    if name is None:
        name = manifest.execution.default_workflow
    if name is None:
        if len(workflows) == 1:
            return workflows[0]
        if not workflows:
            raise WorkflowNotFound(f"no workflows under {manifest.workflows_dir!r}")
        names = ", ".join(w.name for w in workflows)
        raise WorkflowNotFound(f"several workflows available ({names}); name one")
    for workflow in workflows:
        if workflow.name == name:
            return workflow
    raise WorkflowNotFound(f"no workflow named {name!r} under {manifest.workflows_dir!r}")


def apply_profile(manifest: ProjectManifest, profile: str) -> SwapJournal:
    """Swap each profile original for its replacement under the input dir.

    The journal is written to disk before the first rename; on any failure
    the moves already performed are rolled back and the tree is unchanged.
    """
    if profile not in manifest.profiles:
        raise UnknownProfile(f"profile {profile!r} is not declared in the manifest")
    jpath = journal_path(manifest.root)
    if jpath.exists():
        raise SwapAlreadyApplied(f"a swap journal already exists at {jpath}")

    pairs = sorted(manifest.profiles[profile].items())
    entries: list[SwapEntry] = []
    for index, (orig, repl) in enumerate(pairs):
        for rel in (orig, repl):
            full = manifest.input_path / rel
            if not full.is_file() or full.is_symlink():
                raise ProfileFileMissing(f"{(manifest.input_path / rel)} is not a regular file")
        original = (Path(manifest.input_dir) / orig).as_posix()
        replacement = (Path(manifest.input_dir) / repl).as_posix()
        holding = f"{STATE_DIR}/hold_{index}_{os.path.basename(orig)}"
        entries.append(SwapEntry(original, replacement, holding))

    jpath.parent.mkdir(exist_ok=True)
    lines = [JOURNAL_HEADER]
    lines += [f"{e.original}\t{e.replacement}\t{e.holding}" for e in entries]
    jpath.write_text("\n".join(lines) + "\n", encoding="utf-8")

    journal = SwapJournal(root=manifest.root, entries=entries, state="applied")
    done: list[SwapEntry] = []
    try:
        for entry in entries:
            os.replace(manifest.root / entry.original, manifest.root / entry.holding)
            try:
                os.replace(manifest.root / entry.replacement, manifest.root / entry.original)
            except OSError:
                os.replace(manifest.root / entry.holding, manifest.root / entry.original)
                raise
            done.append(entry)
    except OSError:
        for entry in reversed(done):
            os.replace(manifest.root / entry.original, manifest.root / entry.replacement)
            os.replace(manifest.root / entry.holding, manifest.root / entry.original)
        journal.state = "reverted"
        _remove_journal(jpath)
        raise
    return journal


def _remove_journal(jpath: Path) -> None:
    jpath.unlink(missing_ok=True)
    try:
        jpath.parent.rmdir()
    except OSError:
        pass  # other state still present


def revert_profile(journal: SwapJournal) -> None:
    """Undo an applied swap, restoring every file byte-identical.

    Entries are reverted in reverse order; entries whose holding file is
    absent were never applied (interrupted apply) and are skipped.
    """
    if journal.state != "applied" or not journal.path.exists():
        raise JournalCorrupt("no applied swap journal to revert")
    problems: list[str] = []
    for entry in reversed(journal.entries):
        orig = journal.root / entry.original
        repl = journal.root / entry.replacement
        hold = journal.root / entry.holding
        if not hold.exists():
            continue
        try:
            if orig.exists():
                if repl.exists():
                    problems.append(f"{entry.replacement}: reappeared while swapped")
                    continue
                os.replace(orig, repl)
            os.replace(hold, orig)
        except OSError as exc:
            problems.append(f"{entry.original}: {exc}")
    if problems:
        raise JournalCorrupt("partial revert: " + "; ".join(problems))
    _remove_journal(journal.path)
    journal.state = "reverted"


def load_journal(root: Path) -> SwapJournal:
    """Read a persisted swap journal, validating its format."""
    jpath = journal_path(root)
    try:
        lines = jpath.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise JournalCorrupt(f"cannot read swap journal: {exc}") from exc
    if not lines or lines[0] != JOURNAL_HEADER:
        raise JournalCorrupt(f"unrecognized journal header in {jpath}")
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise JournalCorrupt(f"malformed journal line {line!r}")
        entries.append(SwapEntry(*parts))
    return SwapJournal(root=Path(root), entries=entries, state="applied")


def recover_swap(root: Path) -> bool:
    """Revert a swap left behind by a dead process; True if one was found."""
    if not journal_path(root).exists():
        return False
    revert_profile(load_journal(Path(root)))
    return True


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextmanager
def project_lock(root: Path) -> Iterator[None]:
    """Exclusive per-project run lock with stale-lock takeover."""
    lock = root / LOCK_NAME
    acquired = False
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            with os.fdopen(fd, "w") as fh:
                fh.write(f"{os.getpid()}\n")
            acquired = True
            break
        except FileExistsError:
            try:
                holder = int(lock.read_text().strip())
            except (OSError, ValueError):
                holder = None
            if holder is not None and _pid_alive(holder):
                raise ProjectLocked(f"project is locked by running process {holder}")
            lock.unlink(missing_ok=True)  # stale: owner is gone
    if not acquired:
        raise ProjectLocked(f"could not acquire {lock}")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def run(
    manifest: ProjectManifest,
    workflow: str | None = None,
    profile: str | None = None,
    containerized: bool = False,
) -> int:
    """Materialize and execute a workflow at the project root.

    Copies the workflow file to the reserved entry name, optionally applies
    an input profile, runs the child (locally or in a container), and on
    every exit path removes the entry file and reverts the profile. Returns
    0 on success; a nonzero child raises :class:`ExecutionFailed` with the
    child's status.
    """
    descriptor = select_workflow(manifest, workflow)
    source = manifest.root / descriptor.source
    if not source.is_file():
        raise WorkflowNotFound(f"workflow file {descriptor.source!r} disappeared")

    with project_lock(manifest.root):
        engine = image = None
        if containerized:
            if descriptor.recipe is None:
                raise NoRecipe(f"workflow {descriptor.name!r} has no container recipe")
            engine = container_mod.detect_engine(manifest.execution.engines)
            image = container_mod.build_image(
                engine, manifest.root / descriptor.recipe, manifest, descriptor.name
            )

        journal = apply_profile(manifest, profile) if profile is not None else None
        entry = manifest.root / entry_name(descriptor.kind)
        status: int | None = None
        try:
            shutil.copyfile(source, entry)
            overlay = {ENV_PROFILE: profile or ""}
            if containerized:
                assert engine is not None and image is not None
                status = container_mod.run_in_container(
                    engine, image, manifest, entry=entry, env=overlay
                )
            else:
                env = dict(os.environ)
                env.update(overlay)
                env[ENV_PROJECT_ROOT] = str(manifest.root)
                proc = subprocess.run(
                    entry_command(descriptor.kind, entry.name),
                    cwd=manifest.root,
                    env=env,
                )
                status = proc.returncode
        finally:
            entry.unlink(missing_ok=True)
            if journal is not None and journal.state == "applied":
                revert_profile(journal)
        if status != 0:
            raise ExecutionFailed(status, f"workflow {descriptor.name!r}")
        return 0
