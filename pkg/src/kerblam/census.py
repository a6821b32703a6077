"""Template-structure census: how often do many project trees share paths?

Each template becomes a listing of relative paths flagged file or
directory; listings are merged into a frequency tree whose node counts say
in how many distinct templates that exact path (with that kind) occurs.
Housekeeping entries like version-control internals are stripped first,
and rarely-shared nodes can be pruned with a count threshold. Files and
directories with the same name are distinct nodes.
"""

from __future__ import annotations

import csv
import io
import json
import os
import posixpath
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal

from .errors import DuplicateTemplateId, ListingError

PathKind = Literal["dir", "file"]

DEFAULT_MIN_COUNT = 3
DEFAULT_EXCLUSIONS = (".git", ".git/**", "**/.gitkeep")

_KIND_FLAGS = {"F": "file", "D": "dir"}
_FLAG_BY_KIND = {"file": "F", "dir": "D"}


def _normalize_path(raw: str) -> str:
    if "\\" in raw:
        raise ListingError(f"use forward slashes: {raw!r}")
    if raw.startswith("/"):
        raise ListingError(f"paths must be relative: {raw!r}")
    norm = posixpath.normpath(raw)
    if norm in (".", "..") or norm.startswith("../"):
        raise ListingError(f"path escapes the template root: {raw!r}")
    return norm


@dataclass(frozen=True)
class TemplateListing:
    """One template's normalized (path, kind) entries, ancestors included."""

    template_id: str
    entries: frozenset[tuple[str, PathKind]]

    @classmethod
    def build(
        cls, template_id: str, pairs: Iterable[tuple[str, PathKind]]
    ) -> "TemplateListing":
        """Normalize paths, add implied ancestor directories, reject conflicts."""
        kinds: dict[str, PathKind] = {}

        def record(path: str, kind: PathKind) -> None:
            previous = kinds.get(path)
            if previous is not None and previous != kind:
                raise ListingError(
                    f"{template_id}: {path!r} is listed both as a file and a directory"
                )
            kinds[path] = kind

        for raw, kind in pairs:
            if kind not in ("file", "dir"):
                raise ListingError(f"unknown path kind {kind!r}")
            path = _normalize_path(raw)
            record(path, kind)
            parent = posixpath.dirname(path)
            while parent:
                record(parent, "dir")
                parent = posixpath.dirname(parent)
        return cls(template_id=template_id, entries=frozenset(kinds.items()))


def scan_tree(root: Path | str, template_id: str | None = None) -> TemplateListing:
    """List all files and directories under ``root``; symlinks are recorded
    as files and never followed."""
    root = Path(root)
    pairs: list[tuple[str, PathKind]] = []

    def scan(directory: Path, prefix: str) -> None:
        for entry in sorted(os.scandir(directory), key=lambda e: e.name):
            rel = f"{prefix}{entry.name}"
            if entry.is_symlink():
                pairs.append((rel, "file"))
            elif entry.is_dir(follow_symlinks=False):
                pairs.append((rel, "dir"))
                scan(directory / entry.name, f"{rel}/")
            else:
                pairs.append((rel, "file"))

    scan(root, "")
    return TemplateListing.build(template_id or str(root), pairs)


def read_listing(path: Path | str, template_id: str | None = None) -> TemplateListing:
    """Parse a listing file: one ``F<TAB>path`` or ``D<TAB>path`` per line."""
    path = Path(path)
    pairs: list[tuple[str, PathKind]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        flag, sep, entry_path = line.partition("\t")
        if not sep or flag not in _KIND_FLAGS or not entry_path:
            raise ListingError(f"{path}:{lineno}: expected 'F<TAB>path' or 'D<TAB>path'")
        pairs.append((entry_path.strip(), _KIND_FLAGS[flag]))
    return TemplateListing.build(template_id or str(path), pairs)


def write_listing(listing: TemplateListing) -> str:
    lines = [f"{_FLAG_BY_KIND[kind]}\t{path}" for path, kind in sorted(listing.entries)]
    return "\n".join(lines) + "\n" if lines else ""


def _compile_pattern(pattern: str) -> re.Pattern[str]:
    """Translate a glob with ``**`` (any segments), ``*``, ``?`` to a regex."""
    parts = pattern.split("/")
    out = []
    for index, part in enumerate(parts):
        last = index == len(parts) - 1
        if part == "**":
            out.append(".+" if last else "(?:[^/]+/)*")
            continue
        piece = "".join(
            "[^/]*" if ch == "*" else "[^/]" if ch == "?" else re.escape(ch)
            for ch in part
        )
        out.append(piece + ("" if last else "/"))
    return re.compile("".join(out))


def strip_housekeeping(
    listing: TemplateListing, exclusions: Iterable[str] = DEFAULT_EXCLUSIONS
) -> TemplateListing:
    """Drop every entry matching an exclusion pattern."""
    patterns = [_compile_pattern(p) for p in exclusions]
    survivors = [
        (path, kind)
        for path, kind in listing.entries
        if not any(p.fullmatch(path) for p in patterns)
    ]
    return TemplateListing.build(listing.template_id, survivors)


@dataclass
class FrequencyNode:
    name: str
    kind: PathKind
    count: int
    children: list["FrequencyNode"] = field(default_factory=list)


@dataclass
class FrequencyTree:
    """Merged path tree; the root's count is the number of templates."""

    root: FrequencyNode

    @property
    def template_count(self) -> int:
        return self.root.count

    def iter_nodes(self) -> Iterator[tuple[str, FrequencyNode]]:
        """Yield (path, node) pairs in pre-order, excluding the root."""

        def walk(prefix: str, node: FrequencyNode) -> Iterator[tuple[str, FrequencyNode]]:
            for child in node.children:
                path = f"{prefix}{child.name}"
                yield path, child
                yield from walk(f"{path}/", child)

        yield from walk("", self.root)


def _sort_children(node: FrequencyNode) -> None:
    node.children.sort(key=lambda c: (-c.count, c.name, c.kind))
    for child in node.children:
        _sort_children(child)


def merge(listings: list[TemplateListing]) -> FrequencyTree:
    """Merge listings into a frequency tree; counts are per-template."""
    if not listings:
        raise ValueError("merge needs at least one listing")
    seen_ids = set()
    for listing in listings:
        if listing.template_id in seen_ids:
            raise DuplicateTemplateId(f"duplicate template id {listing.template_id!r}")
        seen_ids.add(listing.template_id)

    root = FrequencyNode(name="", kind="dir", count=len(listings))
    index: dict[tuple[str, PathKind], FrequencyNode] = {}
    counts: dict[tuple[str, PathKind], int] = {}
    for listing in listings:
        for entry in listing.entries:
            counts[entry] = counts.get(entry, 0) + 1
    # Shorter paths first guarantees parents exist before their children.
    for path, kind in sorted(counts, key=lambda e: (e[0].count("/"), e)):
        parent_path = posixpath.dirname(path)
        parent = index[(parent_path, "dir")] if parent_path else root
        node = FrequencyNode(
            name=posixpath.basename(path), kind=kind, count=counts[(path, kind)]
        )
        parent.children.append(node)
        index[(path, kind)] = node
    _sort_children(root)
    return FrequencyTree(root=root)


def threshold(tree: FrequencyTree, min_count: int = DEFAULT_MIN_COUNT) -> FrequencyTree:
    """Drop every node seen in fewer than ``min_count`` templates."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")

    def prune(node: FrequencyNode) -> FrequencyNode:
        kept = [prune(c) for c in node.children if c.count >= min_count]
        return FrequencyNode(name=node.name, kind=node.kind, count=node.count, children=kept)

    return FrequencyTree(root=prune(tree.root))


@dataclass(frozen=True)
class UniquenessStats:
    total_entries: int
    unique_entries: int
    total_dirs: int
    unique_dirs: int


def uniqueness(tree: FrequencyTree) -> UniquenessStats:
    """How many nodes occur in exactly one template, overall and dirs-only."""
    total = unique = total_dirs = unique_dirs = 0
    for _, node in tree.iter_nodes():
        total += 1
        is_unique = node.count == 1
        unique += is_unique
        if node.kind == "dir":
            total_dirs += 1
            unique_dirs += is_unique
    return UniquenessStats(total, unique, total_dirs, unique_dirs)


def _node_dict(node: FrequencyNode) -> dict:
    return {
        "name": node.name,
        "kind": node.kind,
        "count": node.count,
        "children": [_node_dict(c) for c in node.children],
    }


def _node_from_dict(data: dict) -> FrequencyNode:
    try:
        return FrequencyNode(
            name=data["name"],
            kind=data["kind"],
            count=data["count"],
            children=[_node_from_dict(c) for c in data.get("children", [])],
        )
    except (KeyError, TypeError) as exc:
        raise ListingError(f"malformed tree document: {exc}") from exc


def parse_tree(text: str) -> FrequencyTree:
    """Inverse of ``emit(tree, "json")``."""
    return FrequencyTree(root=_node_from_dict(json.loads(text)))


def _emit_dot(tree: FrequencyTree) -> str:
    def quote(s: str) -> str:
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph census {"]
    lines.append(f'  {quote("/")} [label={quote(str(tree.template_count))}];')
    for path, node in tree.iter_nodes():
        node_id = f"{'d' if node.kind == 'dir' else 'f'}:{path}"
        lines.append(f"  {quote(node_id)} [label={quote(f'{node.name} ({node.count})')}];")
        parent_path = posixpath.dirname(path)
        parent_id = "/" if not parent_path else f"d:{parent_path}"
        lines.append(f"  {quote(parent_id)} -> {quote(node_id)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _emit_csv(tree: FrequencyTree) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["path", "kind", "count"])
    for path, node in tree.iter_nodes():
        writer.writerow([path, node.kind, node.count])
    return buffer.getvalue()


def emit(tree: FrequencyTree, fmt: Literal["json", "dot", "csv"] = "json") -> str:
    """Deterministic serialization of the tree."""
    if fmt == "json":
        return json.dumps(_node_dict(tree.root), indent=2) + "\n"
    if fmt == "dot":
        return _emit_dot(tree)
    if fmt == "csv":
        return _emit_csv(tree)
    raise ValueError(f"unknown census format {fmt!r}")
