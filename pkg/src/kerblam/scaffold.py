"""Create the standard skeleton for a new managed project."""

from __future__ import annotations

import shutil
import subprocess
from pathlib import Path

from .errors import TargetNotEmpty
from .manifest import MANIFEST_NAME

SKELETON_DIRS = ("data", "data/in", "data/out", "src", "src/workflows", "src/dockerfiles")
SKELETON_FILES = (MANIFEST_NAME, "README.md")

_MANIFEST_STUB = """\
[meta]
version = 1

# Declare remote inputs under [data.remote] and input profiles under
# [data.profiles.<name>]; paths default to data/, data/in/, data/out/.
"""

_README_STUB = """\
# {name}

Data-analysis project managed with kerblam.

- `data/in/` input data (declare remote inputs in `kerblam.toml`, get them with `kerblam fetch`)
- `data/out/` output data
- `src/workflows/` pipelines (`*.makefile` or `*.sh`), run with `kerblam run <name>`
- `src/dockerfiles/` container recipes matched to workflows by stem
"""


def scaffold_new(
    target: Path | str, project_name: str | None = None, init_git: bool = True
) -> list[str]:
    """Create the project skeleton in an absent or empty directory.

    Returns the created paths relative to the target. A git repository is
    initialized when the tool is available, silently skipped otherwise.
    """
    target = Path(target)
    if target.exists():
        if not target.is_dir() or any(target.iterdir()):
            raise TargetNotEmpty(f"{target} exists and is not an empty directory")
    else:
        target.mkdir(parents=True)
    name = project_name or target.resolve().name

    for rel in SKELETON_DIRS:
        (target / rel).mkdir(parents=True, exist_ok=True)
    (target / MANIFEST_NAME).write_text(_MANIFEST_STUB, encoding="utf-8")
    (target / "README.md").write_text(_README_STUB.format(name=name), encoding="utf-8")

    if init_git and shutil.which("git"):
        subprocess.run(
            ["git", "init", "--quiet"],
            cwd=target,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
    return sorted([*SKELETON_DIRS, *SKELETON_FILES])
