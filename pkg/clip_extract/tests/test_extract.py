import json
from pathlib import Path

import numpy as np
import pytest

from clip_extract.cli import main
from clip_extract.extract import ExtractManifest, extract

GOLDEN_DIR = Path(__file__).resolve().parents[2] / "goldens"


def write_manifest(tmp_path, **overrides):
    entries = [{"id": 3, "path": str(GOLDEN_DIR / "input.ubpi")},
               {"id": 7, "path": str(GOLDEN_DIR / "input.ppm")}]
    raw = {"images": entries, "backbone": "toy:16:2",
           "r0": 0.25, "c": 10.0, "lambda": 2.0}
    raw.update(overrides)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(raw))
    return path


def test_extract_writes_all_levels(tmp_path):
    manifest = ExtractManifest.from_file(write_manifest(tmp_path))
    out = tmp_path / "features.ubpf"
    result = extract(manifest, out_path=out)
    assert result.ok
    assert result.n_written == 2
    assert out.exists()


def test_low_and_base_levels_identical_at_default_radii(tmp_path):
    # both the lowered (0.25 - 10) and baseline (0.25) radii sit below the
    # no-blur threshold, so their embeddings must agree exactly
    manifest = ExtractManifest.from_file(write_manifest(tmp_path))
    out = tmp_path / "features.ubpf"
    extract(manifest, out_path=out)
    raw = out.read_bytes()
    import struct

    n_images, dim = struct.unpack("<II", raw[8:16])
    (tag_len,) = struct.unpack("<I", raw[16:20])
    pos = 20 + tag_len
    for _ in range(n_images):
        pos += 4
        low = np.frombuffer(raw[pos : pos + 4 * dim], dtype="<f4")
        base = np.frombuffer(raw[pos + 4 * dim : pos + 8 * dim], dtype="<f4")
        high = np.frombuffer(raw[pos + 8 * dim : pos + 12 * dim], dtype="<f4")
        assert np.array_equal(low, base)
        assert not np.array_equal(base, high)
        pos += 12 * dim


def test_missing_image_collected_not_fatal(tmp_path):
    path = write_manifest(tmp_path)
    raw = json.loads(path.read_text())
    raw["images"].append({"id": 9, "path": str(tmp_path / "missing.ubpi")})
    path.write_text(json.dumps(raw))
    manifest = ExtractManifest.from_file(path)
    result = extract(manifest, out_path=tmp_path / "f.ubpf")
    assert result.n_written == 2
    assert len(result.errors) == 1
    assert "9" in result.errors[0]


def test_cli_exit_codes(tmp_path, capsys):
    ok = main(["extract", "--manifest", str(write_manifest(tmp_path)),
               "--out", str(tmp_path / "a.ubpf")])
    assert ok == 0

    bad = write_manifest(tmp_path)
    raw = json.loads(bad.read_text())
    raw["images"] = [{"id": 1, "path": str(tmp_path / "nope.ubpi")}]
    bad.write_text(json.dumps(raw))
    assert main(["extract", "--manifest", str(bad),
                 "--out", str(tmp_path / "b.ubpf")]) == 1

    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"images": []}))
    assert main(["extract", "--manifest", str(empty),
                 "--out", str(tmp_path / "c.ubpf")]) == 2


def test_duplicate_ids_rejected(tmp_path):
    path = write_manifest(tmp_path)
    raw = json.loads(path.read_text())
    raw["images"] = [{"id": 1, "path": "a.ubpi"}, {"id": 1, "path": "b.ubpi"}]
    path.write_text(json.dumps(raw))
    with pytest.raises(ValueError):
        ExtractManifest.from_file(path)


def test_unknown_backbone_rejected(tmp_path):
    manifest = ExtractManifest.from_file(write_manifest(tmp_path, backbone="resnet9000"))
    with pytest.raises(ValueError):
        extract(manifest, out_path=tmp_path / "x.ubpf")
