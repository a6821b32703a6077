"""Deterministic gzip tarballs: same inputs, byte-identical archives."""

from __future__ import annotations

import gzip
import io
import tarfile
from pathlib import Path
from typing import Mapping, Sequence

FIXED_MTIME = 0
FILE_MODE = 0o644


def write_archive(
    dest: Path,
    root: Path,
    members: Sequence[str],
    extra: Mapping[str, bytes] | None = None,
) -> Path:
    """Write ``members`` (paths relative to ``root``) plus in-memory ``extra``
    entries into a gzip tarball at ``dest``.

    Entries are sorted lexicographically and carry fixed metadata (mtime 0,
    mode 0644, no owner) so repeated runs over unchanged inputs produce
    byte-identical files. Only regular-file entries are written; extraction
    recreates directories implicitly.
    """
    extra = dict(extra or {})
    names = sorted(set(members) | set(extra))
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "wb") as raw:
        # GzipFile with mtime=0 and no embedded name keeps the header stable.
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=FIXED_MTIME, filename="") as gz:
            with tarfile.open(fileobj=gz, mode="w", format=tarfile.GNU_FORMAT) as tar:
                for name in names:
                    info = tarfile.TarInfo(name)
                    info.mtime = FIXED_MTIME
                    info.mode = FILE_MODE
                    info.uid = info.gid = 0
                    info.uname = info.gname = ""
                    if name in extra:
                        payload = extra[name]
                        info.size = len(payload)
                        tar.addfile(info, io.BytesIO(payload))
                    else:
                        source = root / name
                        info.size = source.stat().st_size
                        with open(source, "rb") as fh:
                            tar.addfile(info, fh)
    return dest
