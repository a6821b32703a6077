"""Project manifest: locate, parse, validate, and serialize ``kerblam.toml``.

The manifest marks a directory as a managed project and configures every
other module: where data lives, which inputs are remote, the input
profiles, and execution options. Parsing is strict: unknown keys are
rejected with their dotted location, and a document either yields a fully
valid :class:`ProjectManifest` or a structured error, never a partial one.

Paths are stored lexically normalized (forward slashes, no ``.`` or ``..``
segments); symlinks are not resolved here, use sites enforce their own
policy.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomlkit

from .errors import ManifestSyntaxError, ManifestValidationError, NotAProject

MANIFEST_NAME = "kerblam.toml"
MANIFEST_VERSION = 1

DEFAULT_DATA_DIR = "data"
DEFAULT_INPUT_DIR = "data/in"
DEFAULT_OUTPUT_DIR = "data/out"
DEFAULT_WORKFLOWS_DIR = "src/workflows"
DEFAULT_RECIPES_DIR = "src/dockerfiles"
DEFAULT_ENGINES = ("docker", "podman")

_HEX_DIGITS = frozenset("0123456789abcdef")


@dataclass(frozen=True)
class RemoteSource:
    """Where a remote input file can be fetched from."""

    url: str
    sha256: str | None = None


@dataclass(frozen=True)
class ExecutionOptions:
    engines: tuple[str, ...] = DEFAULT_ENGINES
    default_workflow: str | None = None


@dataclass(frozen=True)
class ProjectManifest:
    """Parsed and validated project configuration.

    All ``*_dir`` fields are project-relative; ``remote_files`` keys and
    profile path pairs are input-relative. Instances are immutable and safe
    to share across threads.
    """

    root: Path
    data_dir: str = DEFAULT_DATA_DIR
    input_dir: str = DEFAULT_INPUT_DIR
    output_dir: str = DEFAULT_OUTPUT_DIR
    workflows_dir: str = DEFAULT_WORKFLOWS_DIR
    recipes_dir: str = DEFAULT_RECIPES_DIR
    remote_files: Mapping[str, RemoteSource] = field(default_factory=dict)
    profiles: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    execution: ExecutionOptions = field(default_factory=ExecutionOptions)

    @property
    def project_name(self) -> str:
        return self.root.name

    @property
    def data_path(self) -> Path:
        return self.root / self.data_dir

    @property
    def input_path(self) -> Path:
        return self.root / self.input_dir

    @property
    def output_path(self) -> Path:
        return self.root / self.output_dir

    @property
    def workflows_path(self) -> Path:
        return self.root / self.workflows_dir

    @property
    def recipes_path(self) -> Path:
        return self.root / self.recipes_dir


def is_within(child: str, parent: str, *, strict: bool = False) -> bool:
    """Lexical containment test on normalized relative paths."""
    child_parts = tuple(p for p in child.split("/") if p not in ("", "."))
    parent_parts = tuple(p for p in parent.split("/") if p not in ("", "."))
    if child_parts[: len(parent_parts)] != parent_parts:
        return False
    return not strict or len(child_parts) > len(parent_parts)


def normalize_relpath(value: Any, where: str) -> str:
    """Normalize a manifest path value; reject anything escaping the project."""
    if not isinstance(value, str):
        raise ManifestValidationError(f"{where}: expected a string path")
    if "\\" in value:
        raise ManifestValidationError(f"{where}: use forward slashes ({value!r})")
    if value.startswith("/") or not value.strip():
        raise ManifestValidationError(f"{where}: path must be relative ({value!r})")
    norm = posixpath.normpath(value)
    if norm == ".." or norm.startswith("../") or norm == ".":
        raise ManifestValidationError(
            f"{where}: path escapes or names the containing directory ({value!r})"
        )
    return norm


def _expect_table(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise ManifestValidationError(f"{where}: expected a table")
    return value


def _reject_unknown(table: Mapping[str, Any], allowed: frozenset[str], where: str) -> None:
    for key in table:
        if key not in allowed:
            loc = f"{where}.{key}" if where else key
            raise ManifestValidationError(f"unknown key {loc!r}")


def _parse_remote(table: Mapping[str, Any]) -> dict[str, RemoteSource]:
    remote: dict[str, RemoteSource] = {}
    for raw_key, value in table.items():
        where = f"data.remote.{raw_key}"
        key = normalize_relpath(raw_key, where)
        if isinstance(value, str):
            source = RemoteSource(url=value)
        elif isinstance(value, dict):
            _reject_unknown(value, frozenset({"url", "sha256"}), where)
            url = value.get("url")
            if not isinstance(url, str) or not url:
                raise ManifestValidationError(f"{where}: missing or empty url")
            sha = value.get("sha256")
            if sha is not None:
                if not isinstance(sha, str):
                    raise ManifestValidationError(f"{where}.sha256: expected a string")
                sha = sha.lower()
                if len(sha) != 64 or not set(sha) <= _HEX_DIGITS:
                    raise ManifestValidationError(
                        f"{where}.sha256: not a sha256 hex digest"
                    )
            source = RemoteSource(url=url, sha256=sha)
        else:
            raise ManifestValidationError(f"{where}: expected a url string or table")
        if not source.url:
            raise ManifestValidationError(f"{where}: empty url")
        if key in remote:
            raise ManifestValidationError(f"{where}: duplicate remote entry")
        remote[key] = source
    return remote


def _parse_profiles(table: Mapping[str, Any]) -> dict[str, dict[str, str]]:
    profiles: dict[str, dict[str, str]] = {}
    for name, pairs in table.items():
        where = f"data.profiles.{name}"
        pairs = _expect_table(pairs, where)
        mapping: dict[str, str] = {}
        for raw_orig, raw_repl in pairs.items():
            pair_where = f"{where}.{raw_orig}"
            orig = normalize_relpath(raw_orig, pair_where)
            repl = normalize_relpath(raw_repl, pair_where)
            if orig == repl:
                raise ManifestValidationError(
                    f"{pair_where}: a file cannot be swapped with itself"
                )
            if orig in mapping:
                raise ManifestValidationError(f"{pair_where}: duplicate original")
            mapping[orig] = repl
        replacements = list(mapping.values())
        if len(set(replacements)) != len(replacements):
            raise ManifestValidationError(
                f"{where}: two originals map to the same replacement"
            )
        # A path appearing on both sides would make the swap order-dependent.
        overlap = set(mapping) & set(replacements)
        if overlap:
            raise ManifestValidationError(
                f"{where}: {sorted(overlap)[0]!r} is both an original and a replacement"
            )
        profiles[name] = mapping
    return profiles


def parse_manifest(text: str, root: Path) -> ProjectManifest:
    """Parse a manifest document into a validated :class:`ProjectManifest`.

    ``root`` is the directory that (notionally) contains the document; it
    is recorded on the result and never read from disk here.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestSyntaxError(f"malformed manifest: {exc}") from exc

    _reject_unknown(doc, frozenset({"meta", "data", "code", "execution"}), "")

    meta = _expect_table(doc.get("meta", {}), "meta")
    _reject_unknown(meta, frozenset({"version"}), "meta")
    version = meta.get("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ManifestValidationError(
            f"meta.version: unsupported manifest version {version!r}"
        )

    data = _expect_table(doc.get("data", {}), "data")
    _reject_unknown(
        data, frozenset({"dir", "input", "output", "remote", "profiles"}), "data"
    )
    data_dir = normalize_relpath(data.get("dir", DEFAULT_DATA_DIR), "data.dir")
    input_dir = normalize_relpath(data.get("input", DEFAULT_INPUT_DIR), "data.input")
    output_dir = normalize_relpath(data.get("output", DEFAULT_OUTPUT_DIR), "data.output")

    code = _expect_table(doc.get("code", {}), "code")
    _reject_unknown(code, frozenset({"workflows", "dockerfiles"}), "code")
    workflows_dir = normalize_relpath(
        code.get("workflows", DEFAULT_WORKFLOWS_DIR), "code.workflows"
    )
    recipes_dir = normalize_relpath(
        code.get("dockerfiles", DEFAULT_RECIPES_DIR), "code.dockerfiles"
    )

    execution = _expect_table(doc.get("execution", {}), "execution")
    _reject_unknown(execution, frozenset({"engines", "default_workflow"}), "execution")
    engines_raw = execution.get("engines", list(DEFAULT_ENGINES))
    if (
        not isinstance(engines_raw, list)
        or not engines_raw
        or not all(isinstance(e, str) and e for e in engines_raw)
    ):
        raise ManifestValidationError(
            "execution.engines: expected a nonempty list of engine names"
        )
    default_workflow = execution.get("default_workflow")
    if default_workflow is not None and (
        not isinstance(default_workflow, str) or not default_workflow
    ):
        raise ManifestValidationError(
            "execution.default_workflow: expected a workflow name"
        )

    if not is_within(input_dir, data_dir, strict=True):
        raise ManifestValidationError(
            f"data.input: {input_dir!r} is not inside data dir {data_dir!r}"
        )
    if not is_within(output_dir, data_dir, strict=True):
        raise ManifestValidationError(
            f"data.output: {output_dir!r} is not inside data dir {data_dir!r}"
        )
    # Overlapping input/output dirs would make file roles ambiguous.
    if is_within(input_dir, output_dir) or is_within(output_dir, input_dir):
        raise ManifestValidationError(
            "data.output: input and output directories must be disjoint"
        )

    remote = _parse_remote(_expect_table(data.get("remote", {}), "data.remote"))
    profiles = _parse_profiles(_expect_table(data.get("profiles", {}), "data.profiles"))

    return ProjectManifest(
        root=Path(root),
        data_dir=data_dir,
        input_dir=input_dir,
        output_dir=output_dir,
        workflows_dir=workflows_dir,
        recipes_dir=recipes_dir,
        remote_files=remote,
        profiles=profiles,
        execution=ExecutionOptions(
            engines=tuple(engines_raw), default_workflow=default_workflow
        ),
    )


def serialize_manifest(manifest: ProjectManifest) -> str:
    """Render a manifest back to TOML; ``parse_manifest`` inverts this."""
    remote: dict[str, Any] = {}
    for key in sorted(manifest.remote_files):
        source = manifest.remote_files[key]
        if source.sha256 is None:
            remote[key] = source.url
        else:
            remote[key] = {"url": source.url, "sha256": source.sha256}
    doc: dict[str, Any] = {
        "meta": {"version": MANIFEST_VERSION},
        "data": {
            "dir": manifest.data_dir,
            "input": manifest.input_dir,
            "output": manifest.output_dir,
        },
        "code": {
            "workflows": manifest.workflows_dir,
            "dockerfiles": manifest.recipes_dir,
        },
        "execution": {"engines": list(manifest.execution.engines)},
    }
    if manifest.execution.default_workflow is not None:
        doc["execution"]["default_workflow"] = manifest.execution.default_workflow
    if remote:
        doc["data"]["remote"] = remote
    if manifest.profiles:
        doc["data"]["profiles"] = {
            name: dict(sorted(pairs.items()))
            for name, pairs in sorted(manifest.profiles.items())
        }
    return tomlkit.dumps(doc)


def find_project(start: Path | str) -> Path:
    """Return the nearest ancestor of ``start`` containing the manifest file."""
    current = Path(start).resolve()
    if not current.exists():
        raise NotAProject(f"{start!s} does not exist")
    if current.is_file():
        current = current.parent
    for candidate in (current, *current.parents):
        if (candidate / MANIFEST_NAME).is_file():
            return candidate
    raise NotAProject(f"no {MANIFEST_NAME} above {start!s}")


def load_manifest(root: Path | str) -> ProjectManifest:
    """Read and parse ``<root>/kerblam.toml``."""
    root = Path(root).resolve()
    text = (root / MANIFEST_NAME).read_text(encoding="utf-8")
    return parse_manifest(text, root)
