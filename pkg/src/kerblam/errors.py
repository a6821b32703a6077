"""Exception hierarchy shared by all kerblam modules.

Every domain failure derives from :class:`KerblamError` so the CLI can map
them to exit code 1 uniformly; child-process failures carry their exit
status in :class:`ExecutionFailed`.
"""

from __future__ import annotations


class KerblamError(Exception):
    """Base class for all kerblam domain errors."""


class NotAProject(KerblamError):
    """No ancestor of the starting directory contains a project manifest."""


class ManifestSyntaxError(KerblamError):
    """The manifest document is not well-formed TOML."""


class ManifestValidationError(KerblamError):
    """The manifest parsed but violates the schema or an invariant.

    The message always names the offending key path.
    """


class OutsideDataDir(KerblamError):
    """A path handed to the data classifier is not under the data directory."""


class RemoteFetchFailed(KerblamError):
    """A declared remote input could not be retrieved."""


class ChecksumMismatch(KerblamError):
    """Retrieved or packaged bytes disagree with the declared sha256."""

    def __init__(self, path: str, detail: str = "") -> None:
        self.path = path
        msg = f"checksum mismatch for {path!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NothingToPack(KerblamError):
    """The pack selection matched no files."""


class DuplicateWorkflowName(KerblamError):
    """Two workflow files share a stem and would shadow each other."""


class WorkflowNotFound(KerblamError):
    """The requested (or defaulted) workflow does not exist."""


class UnknownProfile(KerblamError):
    """The requested input profile is not declared in the manifest."""


class ProfileFileMissing(KerblamError):
    """A profile original or replacement is absent or not a regular file."""


class SwapAlreadyApplied(KerblamError):
    """A swap journal already exists on disk; refuse to stack profiles."""


class JournalCorrupt(KerblamError):
    """The swap journal is unreadable, absent, or could not be fully reverted."""


class ProjectLocked(KerblamError):
    """Another live process holds the project lock."""


class ExecutionFailed(KerblamError):
    """A workflow or container child process exited nonzero."""

    def __init__(self, status: int, detail: str = "") -> None:
        self.status = status
        msg = f"execution failed with status {status}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EngineUnavailable(KerblamError):
    """No container engine from the preference list answered the probe."""


class BuildFailed(KerblamError):
    """The container image build exited nonzero."""

    def __init__(self, message: str, log: str = "") -> None:
        self.log = log
        super().__init__(message)


class MountFailed(KerblamError):
    """A host path required for a bind mount could not be prepared."""


class NoRecipe(KerblamError):
    """The workflow has no container recipe but one is required."""


class UnsupportedFormatVersion(KerblamError):
    """The replay manifest declares a format this version cannot read."""


class ReplayArchiveInvalid(KerblamError):
    """The replay archive is structurally unsafe or incomplete."""


class ImagePullFailed(KerblamError):
    """The container engine could not pull the packaged image."""


class TargetNotEmpty(KerblamError):
    """Scaffold or replay target directory already contains entries."""


class DuplicateTemplateId(KerblamError):
    """Two census listings share a template identifier."""


class ListingError(KerblamError):
    """A census listing is malformed or internally inconsistent."""
