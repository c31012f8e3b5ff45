import json

import numpy as np
import pytest

from paec.errors import ManifestParseError
from paec.manifest import load_clip, read_manifest, save_clip, write_manifest
from paec.scene import build_scene, sample_specs


@pytest.fixture(scope="module")
def clip(corpus, rirs):
    spec = [s for s in sample_specs(40, 2, corpus.speakers) if s.scenario == "DT"][0]
    return build_scene(spec, corpus, rirs, seconds=1.0, clip_id="c0")


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    write_manifest([], p)
    assert p.read_text() == ""
    assert read_manifest(p) == []


def test_round_trip_one_clip(tmp_path, clip):
    entry = save_clip(clip, tmp_path / "audio", relative_to=tmp_path, split="train")
    p = tmp_path / "m.jsonl"
    write_manifest([entry], p)
    assert len(p.read_text().splitlines()) == 1
    (back,) = read_manifest(p)
    assert back == entry
    assert back.spec == clip.spec
    loaded = load_clip(back, tmp_path)
    for name in "dsyvzx":
        assert np.array_equal(getattr(loaded, name), getattr(clip, name).astype(np.float32))


def test_absolute_and_relative_paths_resolve(tmp_path, clip):
    entry = save_clip(clip, tmp_path / "audio", relative_to=tmp_path)
    entry.paths["s"] = str((tmp_path / entry.paths["s"]).resolve())
    assert entry.resolve("d", tmp_path).exists()
    assert entry.resolve("s", "/elsewhere").exists()
    loaded = load_clip(entry, tmp_path)
    assert loaded.s.size == clip.s.size


@pytest.mark.parametrize(
    "line, fragment",
    [("{not json", "invalid JSON"), ("[1, 2]", "not an object"), ('{"id": "x"}', "missing keys")],
)
def test_malformed_line_reports_line_number(tmp_path, clip, line, fragment):
    entry = save_clip(clip, tmp_path / "audio", relative_to=tmp_path)
    p = tmp_path / "m.jsonl"
    p.write_text(entry.to_json() + "\n" + line + "\n")
    with pytest.raises(ManifestParseError) as info:
        read_manifest(p)
    assert info.value.line_no == 2
    assert fragment in str(info.value)


def test_unknown_key_rejected(tmp_path, clip):
    entry = save_clip(clip, tmp_path / "audio", relative_to=tmp_path)
    obj = json.loads(entry.to_json())
    obj["bogus"] = 1
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(obj) + "\n")
    with pytest.raises(ManifestParseError, match="unknown keys"):
        read_manifest(p)
