"""Foveated Gaussian blur, self-contained.

This tool runs in environments where only the pretrained-model ecosystem is
installed, so the blur math is reimplemented here instead of importing the
training engine. Bit-compatibility with the engine is enforced by golden
raster fixtures, not by code sharing: both implementations must reproduce
the same blurred outputs within 1e-5 per pixel.

Conventions that matter for parity:
  - radius r < 1 means no blur at all;
  - otherwise the kernel has half-width k = round((r-1)/2), at least 1,
    and sigma = (2k+1)/6, sampled and renormalized to unit sum;
  - convolution is separable with reflect-101 (edge-not-repeated) borders;
  - the blend weight is exp(-lam * d / L) with d the Euclidean distance
    from the fixation center and L the distance to the farthest corner;
  - the default fixation center is (height // 2, width // 2).
"""

from __future__ import annotations

import math

import numpy as np


def kernel_weights(r: float):
    """1-D Gaussian tap weights for radius r, or None when r < 1."""
    if not math.isfinite(r):
        raise ValueError("blur radius must be finite")
    if r < 1.0:
        return None
    k = max(1, int(math.floor((r - 1.0) / 2.0 + 0.5)))
    sigma = (2 * k + 1) / 6.0
    offsets = np.arange(-k, k + 1, dtype=np.float64)
    w = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _correlate(planes: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    k = len(weights) // 2
    pad = [(0, 0)] * planes.ndim
    pad[axis] = (k, k)
    padded = np.pad(planes, pad, mode="reflect")
    out = np.zeros_like(planes)
    extent = planes.shape[axis]
    for i, w in enumerate(weights):
        sl = [slice(None)] * planes.ndim
        sl[axis] = slice(i, i + extent)
        out += w * padded[tuple(sl)]
    return out


def uniform_blur(planes: np.ndarray, r: float) -> np.ndarray:
    """Separable blur of [c, h, w] planes; identity when r < 1."""
    w = kernel_weights(r)
    if w is None:
        return planes
    out = _correlate(planes.astype(np.float64, copy=False), w, axis=2)
    out = _correlate(out, w, axis=1)
    return np.clip(out, 0.0, 1.0)


def fovea_blur(planes: np.ndarray, r: float, lam: float, center=None) -> np.ndarray:
    """Blend the original with its blurred copy by distance from the center."""
    w = kernel_weights(r)
    if w is None:
        return planes
    c, h, width = planes.shape
    if center is None:
        center = (h // 2, width // 2)
    cy, cx = center
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    d = np.sqrt((rows - cy) ** 2 + (cols - cx) ** 2)
    corners = [(0, 0), (0, width - 1), (h - 1, 0), (h - 1, width - 1)]
    big_l = max(math.hypot(cy - y, cx - x) for y, x in corners)
    alpha = np.exp(-lam * d / big_l) if big_l > 0 else np.ones((h, width))
    blurred = uniform_blur(planes, r)
    return alpha[None] * planes + (1.0 - alpha[None]) * blurred
