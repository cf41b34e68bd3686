"""Batch extraction: images -> three blur levels -> embeddings -> UBPF file.

The output format is the engine's feature-cache layout, written byte-exactly:
magic "UBPF", version u32, n_images u32, dim u32, backbone tag (u32 length +
UTF-8), then per image an id u32 followed by the low, base, and high level
f32 vectors. Everything little-endian. The file is written atomically via a
temp file and rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .backbones import make_backbone
from .blur import fovea_blur
from .rasters import load_image

FEATURE_MAGIC = b"UBPF"
FORMAT_VERSION = 1
LEVELS = ("low", "base", "high")


@dataclass
class ExtractManifest:
    images: List[dict]                  # [{"id": int, "path": str}]
    backbone: str = "toy:64"
    r0: float = 0.25
    c: float = 10.0
    lam: float = 2.0
    out: Optional[str] = None

    @classmethod
    def from_file(cls, path) -> "ExtractManifest":
        raw = json.loads(Path(path).read_text())
        allowed = {"images", "backbone", "r0", "c", "lambda", "out"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        images = raw.get("images", [])
        if not images:
            raise ValueError("manifest lists no images")
        ids = [int(e["id"]) for e in images]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids must be unique")
        return cls(
            images=images,
            backbone=str(raw.get("backbone", "toy:64")),
            r0=float(raw.get("r0", 0.25)),
            c=float(raw.get("c", 10.0)),
            lam=float(raw.get("lambda", 2.0)),
            out=raw.get("out"),
        )

    @property
    def r_levels(self):
        return (self.r0 - self.c, self.r0, self.r0 + self.c)


@dataclass
class ExtractResult:
    n_written: int
    errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def write_ubpf(path, dim: int, backbone_tag: str, entries):
    """entries: iterable of (image_id, {level: vector}) sorted by id."""
    directory = Path(path).resolve().parent
    fd, tmp_name = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<III", FORMAT_VERSION, len(entries), dim))
            tag = backbone_tag.encode("utf-8")
            fh.write(struct.pack("<I", len(tag)))
            fh.write(tag)
            for image_id, levels in entries:
                fh.write(struct.pack("<I", image_id))
                for level in LEVELS:
                    fh.write(np.ascontiguousarray(levels[level], dtype="<f4").tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def extract(manifest: ExtractManifest, out_path=None) -> ExtractResult:
    out_path = out_path or manifest.out
    if not out_path:
        raise ValueError("no output path given (manifest 'out' or --out)")
    backbone = make_backbone(manifest.backbone)

    entries = []
    errors = []
    for item in sorted(manifest.images, key=lambda e: int(e["id"])):
        image_id = int(item["id"])
        try:
            planes = load_image(item["path"])
            levels = {}
            for level, r in zip(LEVELS, manifest.r_levels):
                blurred = fovea_blur(planes, r, manifest.lam)
                v = np.asarray(backbone.encode(blurred), dtype=np.float64)
                levels[level] = (v / np.linalg.norm(v)).astype(np.float32)
            entries.append((image_id, levels))
        except (OSError, ValueError) as e:
            errors.append(f"image {image_id} ({item['path']}): {e}")

    if entries:
        write_ubpf(out_path, backbone.dim, manifest.backbone, entries)
    return ExtractResult(n_written=len(entries), errors=errors)
