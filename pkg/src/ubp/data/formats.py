"""Binary file formats and the in-memory containers they serialize.

All multi-byte fields are little-endian. Three formats:

  Epoch file "UBPE"      brain-signal trials [samples, channels, timepoints]
      magic, version u32, n_samples u32, n_channels u32, n_timepoints u32,
      sample_rate_hz u32, dtype tag u8 (0 = f16, 1 = f32), subject label
      (u32 length + UTF-8), image_ids u32[n_samples], raw sample data.

  Feature cache "UBPF"   frozen vision embeddings at three blur levels
      magic, version u32, n_images u32, dim u32, backbone tag (u32 length +
      UTF-8), then per image: image_id u32 followed by three f32[dim]
      vectors in (low, base, high) order.

  Image raster "UBPI"    one image, channel-major planes
      magic, h u32, w u32, channels u8, f32 data.

PPM (P6) / PGM (P5) import and export are provided for visual spot checks;
they quantize to 8 bits and are not used by the training pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..blurprior import Image
from ..errors import ContractViolation, FormatError

EPOCH_MAGIC = b"UBPE"
FEATURE_MAGIC = b"UBPF"
RASTER_MAGIC = b"UBPI"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"f16": 0, "f32": 1}
_TAG_DTYPES = {0: np.dtype("<f2"), 1: np.dtype("<f4")}

LEVELS = ("low", "base", "high")


@dataclass
class EpochTensor:
    """Preprocessed brain-signal trials plus their stimulus identifiers.

    data is float32 [n_samples, n_channels, n_timepoints] in memory, whatever
    the storage precision was on disk. channel_names is an in-memory aid for
    name-based selection; the file format does not persist it.
    """

    data: np.ndarray
    sample_rate: int
    image_ids: np.ndarray
    subject_id: str = "s01"
    storage_dtype: str = "f32"
    channel_names: Optional[List[str]] = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractViolation(f"epoch data must be 3-D, got {self.data.shape}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.image_ids = np.ascontiguousarray(self.image_ids, dtype=np.uint32)
        if len(self.image_ids) != self.data.shape[0]:
            raise ContractViolation("one image id per sample is required")
        if self.storage_dtype not in _DTYPE_TAGS:
            raise ContractViolation(f"unsupported storage dtype {self.storage_dtype!r}")
        if self.channel_names is not None and len(self.channel_names) != self.n_channels:
            raise ContractViolation("channel_names length must match channel count")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_timepoints(self) -> int:
        return self.data.shape[2]


@dataclass
class FeatureCache:
    """Vision embeddings keyed by (image id, blur level), L2-normalized f32."""

    dim: int
    backbone_tag: str
    embeddings: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def n_images(self) -> int:
        return len(self.embeddings)

    def insert(self, image_id: int, level_vectors: Dict[str, np.ndarray]):
        if set(level_vectors) != set(LEVELS):
            raise ContractViolation(f"expected levels {LEVELS}, got {sorted(level_vectors)}")
        entry = {}
        for level in LEVELS:
            v = np.ascontiguousarray(level_vectors[level], dtype=np.float32)
            if v.shape != (self.dim,):
                raise ContractViolation(f"embedding shape {v.shape} != ({self.dim},)")
            entry[level] = v
        self.embeddings[int(image_id)] = entry

    def vector(self, image_id: int, level: str) -> np.ndarray:
        try:
            return self.embeddings[int(image_id)][level]
        except KeyError:
            raise ContractViolation(
                f"no cache entry for image {image_id} at level {level!r}"
            ) from None

    def matrix(self, image_ids: Sequence[int], levels) -> np.ndarray:
        """Stack embeddings for a batch; levels is one level or one per id."""
        if isinstance(levels, str):
            levels = [levels] * len(image_ids)
        if len(levels) != len(image_ids):
            raise ContractViolation("need one level per image id")
        return np.stack([self.vector(i, lv) for i, lv in zip(image_ids, levels)])


def _write_string(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated file while reading {what}")
    return raw


def _read_string(fh, what: str) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, what + " length"))
    return _read_exact(fh, n, what).decode("utf-8")


def write_epochs(path, e: EpochTensor, dtype: Optional[str] = None):
    dtype = dtype or e.storage_dtype
    if dtype not in _DTYPE_TAGS:
        raise ContractViolation(f"unsupported storage dtype {dtype!r}")
    disk = e.data.astype(_TAG_DTYPES[_DTYPE_TAGS[dtype]])
    with open(path, "wb") as fh:
        fh.write(EPOCH_MAGIC)
        fh.write(struct.pack("<IIIIIB", FORMAT_VERSION, e.n_samples, e.n_channels,
                             e.n_timepoints, e.sample_rate, _DTYPE_TAGS[dtype]))
        _write_string(fh, e.subject_id)
        fh.write(e.image_ids.astype("<u4").tobytes())
        fh.write(disk.tobytes())


def read_epochs(path) -> EpochTensor:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != EPOCH_MAGIC:
            raise FormatError(f"{path}: not an epoch file")
        version, n, c, t, rate, tag = struct.unpack("<IIIIIB", _read_exact(fh, 21, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{path}: unknown dtype tag {tag}")
        subject = _read_string(fh, "subject label")
        ids = np.frombuffer(_read_exact(fh, 4 * n, "image ids"), dtype="<u4")
        disk_dtype = _TAG_DTYPES[tag]
        raw = _read_exact(fh, disk_dtype.itemsize * n * c * t, "sample data")
        data = np.frombuffer(raw, dtype=disk_dtype).reshape(n, c, t).astype(np.float32)
    storage = "f16" if tag == 0 else "f32"
    return EpochTensor(data=data, sample_rate=rate, image_ids=ids.copy(),
                       subject_id=subject, storage_dtype=storage)


def write_feature_cache(path, cache: FeatureCache):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, cache.n_images, cache.dim))
        _write_string(fh, cache.backbone_tag)
        for image_id in sorted(cache.embeddings):
            fh.write(struct.pack("<I", image_id))
            for level in LEVELS:
                fh.write(cache.embeddings[image_id][level].astype("<f4").tobytes())


def read_feature_cache(path) -> FeatureCache:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != FEATURE_MAGIC:
            raise FormatError(f"{path}: not a feature cache file")
        version, n_images, dim = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        tag = _read_string(fh, "backbone tag")
        cache = FeatureCache(dim=dim, backbone_tag=tag)
        for _ in range(n_images):
            (image_id,) = struct.unpack("<I", _read_exact(fh, 4, "image id"))
            entry = {}
            for level in LEVELS:
                raw = _read_exact(fh, 4 * dim, f"{level} vector")
                entry[level] = np.frombuffer(raw, dtype="<f4").copy()
            cache.insert(image_id, entry)
    return cache


def write_raster(path, img: Image):
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<IIB", img.height, img.width, img.channels))
        fh.write(img.data.astype("<f4").tobytes())


def read_raster(path) -> Image:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != RASTER_MAGIC:
            raise FormatError(f"{path}: not an image raster")
        h, w, c = struct.unpack("<IIB", _read_exact(fh, 9, "header"))
        raw = _read_exact(fh, 4 * h * w * c, "pixel data")
    data = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).astype(np.float64)
    return Image(np.clip(data, 0.0, 1.0))


def write_pnm(path, img: Image):
    """8-bit PPM for 3-channel images, PGM for single-channel."""
    quant = np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)
    header = b"P6" if img.channels == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(header + b"\n%d %d\n255\n" % (img.width, img.height))
        # PNM is interleaved row-major; our planes are channel-major
        fh.write(np.moveaxis(quant, 0, -1).tobytes())


def read_pnm(path) -> Image:
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    channels = 3 if raw[:2] == b"P6" else 1
    # header is exactly four tokens, each followed by one whitespace byte;
    # splitting naively would eat pixel bytes that happen to look like blanks
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed PNM header")
        tokens.append(raw[start:pos])
    pos += 1  # the single whitespace terminating the maxval token
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: malformed PNM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    pixels = np.frombuffer(raw[pos : pos + w * h * channels], dtype=np.uint8)
    if pixels.size != w * h * channels:
        raise FormatError(f"{path}: truncated pixel data")
    planes = np.moveaxis(pixels.reshape(h, w, channels), -1, 0)
    return Image(planes.astype(np.float64) / 255.0)
