from __future__ import annotations

import hashlib
import io
import json
import tarfile
from pathlib import Path

import pytest

from kerblam import container as container_mod
from kerblam import package as package_mod
from kerblam import workflow as workflow_mod
from kerblam.errors import (
    ChecksumMismatch,
    ImagePullFailed,
    NoRecipe,
    ReplayArchiveInvalid,
    TargetNotEmpty,
    UnsupportedFormatVersion,
)

from conftest import build_project, tree_digest

PIPELINE_MAKEFILE = (
    "all: data/out/final.txt\n"
    "data/step1.txt: data/in/patients.csv\n"
    "\ttr a-z A-Z < data/in/patients.csv > data/step1.txt\n"
    "data/out/final.txt: data/step1.txt\n"
    "\tcat data/step1.txt data/step1.txt > data/out/final.txt\n"
)
TOY_RECIPE = "FROM scratch\nCOPY src /kerblam/src\n"


def replayable_project(tmp_path, name="demo", remote=""):
    manifest_text = "[meta]\nversion = 1\n"
    if remote:
        manifest_text += remote
    return build_project(
        tmp_path / name,
        manifest_text=manifest_text,
        files={
            "data/in/patients.csv": "ann,12\nbob,9\n",
            "src/workflows/process.makefile": PIPELINE_MAKEFILE,
            "src/dockerfiles/process.dockerfile": TOY_RECIPE,
        },
    )


def test_package_tarball_contents(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    image, archive_path = package_mod.package(manifest, "process")
    assert str(image) == "kerblam/demo:process"
    with tarfile.open(archive_path, "r:gz") as tar:
        assert tar.getnames() == ["data/in/patients.csv", "replay.toml"]
    # The image carries the entry with the run command baked in.
    stored = fake_engine.store / "kerblam%2Fdemo%3Aprocess"
    assert json.loads((stored / "cmd.json").read_text()) == [
        "make",
        "-f",
        ".kerblam_entry.makefile",
    ]
    with tarfile.open(stored / "context.tar") as tar:
        assert ".kerblam_entry.makefile" in tar.getnames()


def test_package_requires_recipe(tmp_path, fake_engine):
    manifest = build_project(
        tmp_path / "norecipe", files={"src/workflows/w.sh": "exit 0\n"}
    )
    with pytest.raises(NoRecipe):
        package_mod.package(manifest, "w")


def test_package_with_only_remote_inputs(tmp_path, fake_engine):
    manifest = replayable_project(
        tmp_path,
        name="remoteonly",
        remote='[data.remote]\n"patients.csv" = "https://example.org/p.csv"\n',
    )
    _, archive_path = package_mod.package(manifest, "process")
    with tarfile.open(archive_path, "r:gz") as tar:
        assert tar.getnames() == ["replay.toml"]
        doc = tar.extractfile("replay.toml").read().decode()
    replay_manifest = package_mod.ReplayManifest.from_toml(doc)
    assert "patients.csv" in replay_manifest.remote_files
    assert replay_manifest.precious_files == []


def test_package_is_deterministic(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    _, first = package_mod.package(manifest, "process", dest=tmp_path / "one.tar.gz")
    _, second = package_mod.package(manifest, "process", dest=tmp_path / "two.tar.gz")
    assert hashlib.sha256(first.read_bytes()).hexdigest() == hashlib.sha256(
        second.read_bytes()
    ).hexdigest()


def test_round_trip_replay_reproduces_outputs(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    assert workflow_mod.run(manifest, "process") == 0
    original = tree_digest(manifest.output_path)

    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    workdir = tmp_path / "fresh"
    engine = container_mod.detect_engine(("fakeengine",))
    status = package_mod.replay(archive_path, workdir, engine=engine)
    assert status == 0
    assert tree_digest(workdir / "data/out") == original
    assert (workdir / "kerblam.toml").is_file()  # layout recreated as a project


def test_replay_refuses_nonempty_directory(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    workdir = tmp_path / "occupied"
    workdir.mkdir()
    (workdir / "stray.txt").write_text("here first")
    engine = container_mod.detect_engine(("fakeengine",))
    with pytest.raises(TargetNotEmpty):
        package_mod.replay(archive_path, workdir, engine=engine)
    assert sorted(p.name for p in workdir.iterdir()) == ["stray.txt"]


def _retar_with_payload(src: Path, dest: Path, name: str, payload: bytes) -> None:
    """Rewrite a tar.gz replacing one member's bytes (tamper oracle)."""
    with tarfile.open(src, "r:gz") as tar:
        members = [(m, tar.extractfile(m).read()) for m in tar.getmembers()]
    with tarfile.open(dest, "w:gz") as tar:
        for member, blob in members:
            if member.name == name:
                blob = payload
                member.size = len(payload)
            tar.addfile(member, io.BytesIO(blob))


def test_replay_rejects_tampered_precious_file(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    tampered = tmp_path / "tampered.tar.gz"
    _retar_with_payload(
        archive_path, tampered, "data/in/patients.csv", b"ann,99\nbob,0\n"
    )
    workdir = tmp_path / "fresh"
    engine = container_mod.detect_engine(("fakeengine",))
    with pytest.raises(ChecksumMismatch):
        package_mod.replay(tampered, workdir, engine=engine)
    assert list(workdir.iterdir()) == []  # rejected before any extraction


def test_replay_rejects_unknown_members(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    smuggled = tmp_path / "smuggled.tar.gz"
    with tarfile.open(archive_path, "r:gz") as tar:
        members = [(m, tar.extractfile(m).read()) for m in tar.getmembers()]
    with tarfile.open(smuggled, "w:gz") as tar:
        for member, blob in members:
            tar.addfile(member, io.BytesIO(blob))
        extra = tarfile.TarInfo("data/in/surprise.csv")
        extra.size = 2
        tar.addfile(extra, io.BytesIO(b"!!"))
    with pytest.raises(ReplayArchiveInvalid):
        package_mod.replay(smuggled, tmp_path / "fresh2", engine=None)


def test_replay_unsupported_format_version(tmp_path, fake_engine):
    bad = tmp_path / "bad.tar.gz"
    doc = (
        "[package]\nformat_version = 99\nimage = \"kerblam/x:y\"\n"
        "workflow = \"w\"\nworkflow_kind = \"shell\"\ncreated = \"now\"\n"
    )
    with tarfile.open(bad, "w:gz") as tar:
        info = tarfile.TarInfo("replay.toml")
        payload = doc.encode()
        info.size = len(payload)
        tar.addfile(info, io.BytesIO(payload))
    with pytest.raises(UnsupportedFormatVersion):
        package_mod.replay(bad, tmp_path / "fresh", engine=None)


def test_replay_fetches_remote_inputs(tmp_path, fake_engine, file_server):
    url = file_server.serve("p.csv", b"remote,1\n")
    manifest = replayable_project(
        tmp_path,
        name="remoteproj",
        remote=f'[data.remote]\n"extra.csv" = "{url}"\n',
    )
    (manifest.input_path / "extra.csv").write_bytes(b"remote,1\n")
    assert workflow_mod.run(manifest, "process") == 0
    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    workdir = tmp_path / "fresh"
    engine = container_mod.detect_engine(("fakeengine",))
    assert package_mod.replay(archive_path, workdir, engine=engine) == 0
    assert (workdir / "data/in/extra.csv").read_bytes() == b"remote,1\n"


def test_replay_missing_image_fails_pull(tmp_path, fake_engine):
    manifest = replayable_project(tmp_path)
    _, archive_path = package_mod.package(manifest, "process", dest=tmp_path / "pkg.tar.gz")
    # Wipe the engine store: the image is gone and cannot be pulled offline.
    for entry in fake_engine.store.iterdir():
        import shutil

        shutil.rmtree(entry)
    engine = container_mod.detect_engine(("fakeengine",))
    with pytest.raises(ImagePullFailed):
        package_mod.replay(archive_path, tmp_path / "fresh", engine=engine)
