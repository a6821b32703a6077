from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from kerblam.errors import (
    KerblamError,
    ManifestSyntaxError,
    ManifestValidationError,
    NotAProject,
)
from kerblam.manifest import (
    MANIFEST_NAME,
    ExecutionOptions,
    ProjectManifest,
    RemoteSource,
    find_project,
    parse_manifest,
    serialize_manifest,
)

ROOT = Path("/proj")


def test_find_project_from_subdirectory(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text("")
    nested = tmp_path / "src" / "workflows"
    nested.mkdir(parents=True)
    assert find_project(nested) == tmp_path.resolve()


def test_find_project_identity(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text("")
    assert find_project(tmp_path) == tmp_path.resolve()


def test_find_project_missing(tmp_path):
    with pytest.raises(NotAProject):
        find_project(tmp_path)


def test_parse_empty_document_fills_defaults():
    manifest = parse_manifest("", ROOT)
    assert manifest.data_dir == "data"
    assert manifest.input_dir == "data/in"
    assert manifest.output_dir == "data/out"
    assert manifest.workflows_dir == "src/workflows"
    assert manifest.recipes_dir == "src/dockerfiles"
    assert manifest.remote_files == {}
    assert manifest.profiles == {}
    assert manifest.execution == ExecutionOptions()


def test_parse_remote_entry():
    text = '[data.remote]\n"input.csv" = "https://example.org/input.csv"\n'
    manifest = parse_manifest(text, ROOT)
    assert manifest.remote_files == {
        "input.csv": RemoteSource(url="https://example.org/input.csv")
    }


def test_parse_remote_entry_with_checksum():
    sha = "ab" * 32
    text = f'[data.remote]\n"input.csv" = {{ url = "https://x/i", sha256 = "{sha}" }}\n'
    manifest = parse_manifest(text, ROOT)
    assert manifest.remote_files["input.csv"].sha256 == sha


def test_parse_profile_entry():
    text = '[data.profiles.test]\n"input.csv" = "test_input.csv"\n'
    manifest = parse_manifest(text, ROOT)
    assert manifest.profiles == {"test": {"input.csv": "test_input.csv"}}


def test_profile_self_swap_rejected():
    text = '[data.profiles.test]\n"a.csv" = "a.csv"\n'
    with pytest.raises(ManifestValidationError):
        parse_manifest(text, ROOT)


def test_profile_duplicate_replacement_rejected():
    text = '[data.profiles.p]\n"a.csv" = "c.csv"\n"b.csv" = "c.csv"\n'
    with pytest.raises(ManifestValidationError):
        parse_manifest(text, ROOT)


def test_profile_path_on_both_sides_rejected():
    text = '[data.profiles.p]\n"a.csv" = "b.csv"\n"b.csv" = "a.csv"\n'
    with pytest.raises(ManifestValidationError):
        parse_manifest(text, ROOT)


@pytest.mark.parametrize(
    "text, location",
    [
        ("[data]\ninputt = \"data/in\"\n", "data.inputt"),
        ("[extra]\nx = 1\n", "extra"),
        ("[execution]\nengine = \"docker\"\n", "execution.engine"),
    ],
)
def test_unknown_keys_rejected_with_location(text, location):
    with pytest.raises(ManifestValidationError) as excinfo:
        parse_manifest(text, ROOT)
    assert location in str(excinfo.value)


def test_malformed_document_is_syntax_error():
    with pytest.raises(ManifestSyntaxError):
        parse_manifest("[data\n", ROOT)


def test_unsupported_version_rejected():
    with pytest.raises(ManifestValidationError):
        parse_manifest("[meta]\nversion = 2\n", ROOT)


@pytest.mark.parametrize(
    "text",
    [
        '[data]\ninput = "elsewhere/in"\n',  # input outside data dir
        '[data]\ndir = "data"\noutput = "data"\n',  # output equals data dir
        '[data]\ninput = "data/x"\noutput = "data/x/y"\n',  # nested input/output
        '[data.remote]\n"../escape.csv" = "https://x/e"\n',
        '[data.remote]\n"/abs.csv" = "https://x/a"\n',
        '[data.profiles.p]\n"a.csv" = "../b.csv"\n',
        '[data.remote]\n"a.csv" = { url = "https://x", sha256 = "zz" }\n',
    ],
)
def test_invariant_violations_rejected(text):
    with pytest.raises(ManifestValidationError):
        parse_manifest(text, ROOT)


# --- round-trip property -------------------------------------------------

_SEGMENT = st.text(alphabet="abcdefgh01", min_size=1, max_size=6)
_RELPATH = st.lists(_SEGMENT, min_size=1, max_size=3).map("/".join)


@st.composite
def manifests(draw):
    base = draw(_SEGMENT)
    sub_in, sub_out = draw(
        st.lists(_SEGMENT, min_size=2, max_size=2, unique=True)
    )
    remote_keys = draw(st.lists(_RELPATH, max_size=3, unique=True))
    remote = {}
    for key in remote_keys:
        sha = draw(st.one_of(st.none(), st.sampled_from(["0" * 64, "ab" * 32])))
        remote[key] = RemoteSource(url=f"https://example.org/{key}", sha256=sha)
    profile_paths = draw(st.lists(_RELPATH, max_size=6, unique=True))
    half = len(profile_paths) // 2
    pairs = dict(zip(profile_paths[:half], profile_paths[half : 2 * half]))
    profiles = {"test": pairs} if pairs else {}
    engines = tuple(draw(st.lists(_SEGMENT, min_size=1, max_size=2, unique=True)))
    default = draw(st.one_of(st.none(), _SEGMENT))
    return ProjectManifest(
        root=ROOT,
        data_dir=base,
        input_dir=f"{base}/{sub_in}",
        output_dir=f"{base}/{sub_out}",
        workflows_dir=draw(_RELPATH),
        recipes_dir=draw(_RELPATH),
        remote_files=remote,
        profiles=profiles,
        execution=ExecutionOptions(engines=engines, default_workflow=default),
    )


@given(manifests())
def test_serialize_parse_round_trip(manifest):
    assert parse_manifest(serialize_manifest(manifest), ROOT) == manifest


@given(st.text(max_size=200))
def test_fuzzed_documents_never_yield_partial_manifests(text):
    try:
        manifest = parse_manifest(text, ROOT)
    except KerblamError:
        return
    # Whatever parsed must satisfy the core invariants.
    assert manifest.input_dir.startswith(manifest.data_dir + "/")
    assert manifest.output_dir.startswith(manifest.data_dir + "/")
    for profile in manifest.profiles.values():
        for orig, repl in profile.items():
            assert orig != repl
