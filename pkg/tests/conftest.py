"""Shared fixtures: project builders, an independent tree hash, a local
HTTP file server, and the offline fake container engine."""

from __future__ import annotations

import hashlib
import os
import shutil
import stat
import threading
from functools import partial
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from types import SimpleNamespace
from typing import Mapping

import pytest

from kerblam.manifest import MANIFEST_NAME, load_manifest

FAKE_ENGINE_SOURCE = Path(__file__).with_name("fake_engine.py")


def write_tree(root: Path, files: Mapping[str, str | bytes]) -> None:
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)


def build_project(root: Path, manifest_text: str = "", files: Mapping[str, str | bytes] | None = None):
    """Create a managed project with the standard layout and return its manifest."""
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(manifest_text or "[meta]\nversion = 1\n")
    for rel in ("data/in", "data/out", "src/workflows", "src/dockerfiles"):
        (root / rel).mkdir(parents=True, exist_ok=True)
    if files:
        write_tree(root, files)
    return load_manifest(root)


def tree_digest(root: Path, exclude: frozenset[str] = frozenset()) -> str:
    """Order-independent-of-traversal recursive digest of a directory tree.

    Hashes relative paths, entry kinds, file bytes, and symlink targets;
    independent of the code under test.
    """
    digest = hashlib.sha256()
    for current, dirnames, filenames in os.walk(root):
        rel_dir = os.path.relpath(current, root)
        dirnames[:] = sorted(d for d in dirnames if d not in exclude)
        digest.update(f"D {rel_dir}\n".encode())
        for name in sorted(filenames):
            if name in exclude:
                continue
            full = os.path.join(current, name)
            rel = os.path.relpath(full, root)
            st = os.lstat(full)
            if stat.S_ISLNK(st.st_mode):
                digest.update(f"L {rel} -> {os.readlink(full)}\n".encode())
            else:
                digest.update(f"F {rel}\n".encode())
                with open(full, "rb") as fh:
                    digest.update(fh.read())
    return digest.hexdigest()


class _LoggingHandler(SimpleHTTPRequestHandler):
    def log_message(self, *args):  # keep test output quiet
        pass

    def do_GET(self):
        self.server.request_log.append(self.path)
        super().do_GET()


class FileServer:
    def __init__(self, docroot: Path):
        self.docroot = docroot
        handler = partial(_LoggingHandler, directory=str(docroot))
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.httpd.request_log = []
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def requests(self) -> list[str]:
        return self.httpd.request_log

    def url(self, rel: str) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/{rel}"

    def serve(self, rel: str, content: bytes) -> str:
        path = self.docroot / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)
        return self.url(rel)

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def file_server(tmp_path_factory):
    server = FileServer(tmp_path_factory.mktemp("docroot"))
    yield server
    server.stop()


@pytest.fixture
def fake_engine(tmp_path_factory, monkeypatch):
    """Install the offline engine stub on PATH with a fresh image store."""
    bin_dir = tmp_path_factory.mktemp("engine-bin")
    store = tmp_path_factory.mktemp("engine-store")
    executable = bin_dir / "fakeengine"
    shutil.copyfile(FAKE_ENGINE_SOURCE, executable)
    executable.chmod(0o755)
    monkeypatch.setenv("PATH", f"{bin_dir}{os.pathsep}{os.environ['PATH']}")
    monkeypatch.setenv("FAKE_ENGINE_STORE", str(store))
    monkeypatch.setenv("KERBLAM_CONTAINER_ENGINE", "fakeengine")
    return SimpleNamespace(name="fakeengine", store=store, bin_dir=bin_dir)
