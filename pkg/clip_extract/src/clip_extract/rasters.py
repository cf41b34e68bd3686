"""Minimal image readers: the engine's raster format, binary PGM/PPM, and
anything Pillow can open when it is installed."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RASTER_MAGIC = b"UBPI"


def read_raster(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != RASTER_MAGIC:
        raise ValueError(f"{path}: not a raster file")
    h, w, c = struct.unpack("<IIB", raw[4:13])
    pixels = np.frombuffer(raw[13 : 13 + 4 * h * w * c], dtype="<f4")
    if pixels.size != h * w * c:
        raise ValueError(f"{path}: truncated raster")
    return np.clip(pixels.reshape(c, h, w).astype(np.float64), 0.0, 1.0)


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM")
    channels = 3 if raw[:2] == b"P6" else 1
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PNM supported")
    pixels = np.frombuffer(raw[pos : pos + w * h * channels], dtype=np.uint8)
    if pixels.size != w * h * channels:
        raise ValueError(f"{path}: truncated PNM")
    return np.moveaxis(pixels.reshape(h, w, channels), -1, 0).astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    """Return [c, h, w] planes in [0, 1] for any supported file."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ubpi":
        return read_raster(path)
    if suffix in (".ppm", ".pgm"):
        return read_pnm(path)
    try:
        from PIL import Image as PilImage
    except ImportError:
        raise ValueError(
            f"{path}: install Pillow to read {suffix or 'extensionless'} images"
        ) from None
    with PilImage.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)
