"""kerblam: a project manager for data-analysis repositories."""

from .manifest import (
    MANIFEST_NAME,
    ExecutionOptions,
    ProjectManifest,
    RemoteSource,
    find_project,
    load_manifest,
    parse_manifest,
    serialize_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "MANIFEST_NAME",
    "ExecutionOptions",
    "ProjectManifest",
    "RemoteSource",
    "find_project",
    "load_manifest",
    "parse_manifest",
    "serialize_manifest",
    "__version__",
]
