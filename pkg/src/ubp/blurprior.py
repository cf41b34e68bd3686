"""Foveated Gaussian blur.

A continuous blur radius parameter is discretized to an odd separable
Gaussian kernel (or to no kernel at all below radius 1), images are blurred
with reflect-101 borders, and the blurred copy is blended with the original
through an exponential falloff map centered on a fixation point, so detail
survives at the center and fades toward the periphery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ContractViolation

# Discretization of the continuous radius parameter: anything below this is
# treated as "no blur". Keeps fractional baseline radii (e.g. 0.25) and the
# lowered branch of the radius rule (0.25 - 10) on the identity path.
IDENTITY_THRESHOLD = 1.0


@dataclass(frozen=True)
class Image:
    """Channel-major raster with values in [0, 1].

    data has shape [channels, height, width]; channels is 1 or 3.
    """

    data: np.ndarray

    def __post_init__(self):
        a = self.data
        if a.ndim != 3:
            raise ContractViolation(f"image data must be [c, h, w], got shape {a.shape}")
        if a.shape[0] not in (1, 3):
            raise ContractViolation(f"channels must be 1 or 3, got {a.shape[0]}")
        if a.shape[1] < 1 or a.shape[2] < 1:
            raise ContractViolation("image must have at least one pixel")
        if not np.all(np.isfinite(a)):
            raise ContractViolation("image contains NaN or Inf")
        if a.min() < -1e-6 or a.max() > 1.0 + 1e-6:
            raise ContractViolation("image values must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def center(self) -> Tuple[int, int]:
        return (self.height // 2, self.width // 2)


@dataclass(frozen=True)
class BlurParams:
    """Blur radius, falloff decay rate, and fixation center (row, col).

    center=None means the image center. r may be <= 0, meaning no blur.
    """

    r: float
    lam: float = 2.0
    center: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise ContractViolation("blur radius must be finite")
        if self.lam < 0:
            raise ContractViolation("falloff decay rate must be >= 0")


@dataclass(frozen=True)
class Kernel:
    """Separable Gaussian tap weights: length 2k+1, unit sum, symmetric."""

    half_width: int
    sigma: float
    weights: np.ndarray

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1


def gaussian_kernel_1d(k: int, sigma: float) -> Kernel:
    """Sampled Gaussian on [-k, k], renormalized to sum exactly to 1."""
    if k < 1:
        raise ContractViolation("kernel half-width must be >= 1")
    if not sigma > 0:
        raise ContractViolation("sigma must be positive")
    offsets = np.arange(-k, k + 1, dtype=np.float64)
    w = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    w /= w.sum()
    return Kernel(half_width=k, sigma=float(sigma), weights=w)


def radius_to_kernel(r: float) -> Optional[Kernel]:
    """Map a continuous radius to a discrete kernel; None means identity.

    r < 1 gives no blur. Otherwise the kernel size is the odd integer
    nearest to r (half-width k = round((r-1)/2), at least 1) and sigma is
    size/6 so three standard deviations span the kernel.
    """
    if not math.isfinite(r):
        raise ContractViolation("blur radius must be finite")
    if r < IDENTITY_THRESHOLD:
        return None
    k = max(1, int(math.floor((r - 1.0) / 2.0 + 0.5)))
    size = 2 * k + 1
    return gaussian_kernel_1d(k, size / 6.0)


def _correlate_axis(planes: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Correlate [c, h, w] planes along one spatial axis with reflect-101 padding."""
    k = len(weights) // 2
    pad = [(0, 0), (0, 0), (0, 0)]
    pad[axis] = (k, k)
    padded = np.pad(planes, pad, mode="reflect")
    out = np.zeros_like(planes)
    extent = planes.shape[axis]
    for i, w in enumerate(weights):
        sl = [slice(None)] * 3
        sl[axis] = slice(i, i + extent)
        out += w * padded[tuple(sl)]
    return out


def uniform_blur(img: Image, kernel: Optional[Kernel]) -> Image:
    """Separable horizontal-then-vertical Gaussian blur; None kernel is a no-op."""
    if kernel is None:
        return img
    out = _correlate_axis(img.data.astype(np.float64, copy=False), kernel.weights, axis=2)
    out = _correlate_axis(out, kernel.weights, axis=1)
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out)


def fovea_alpha_map(h: int, w: int, lam: float, center: Tuple[float, float]) -> np.ndarray:
    """Exponential falloff exp(-lam * d / L) of distance d from the fixation center.

    L is the distance from the center to the farthest image corner, so the
    map is 1 at the center and exp(-lam) at that corner.
    """
    cr, cc = center
    if not (0 <= cr <= h - 1 and 0 <= cc <= w - 1):
        raise ContractViolation(f"fovea center {center} outside a {h}x{w} image")
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    d = np.sqrt((rows - cr) ** 2 + (cols - cc) ** 2)
    corners = [(0.0, 0.0), (0.0, w - 1.0), (h - 1.0, 0.0), (h - 1.0, w - 1.0)]
    big_l = max(math.hypot(cr - y, cc - x) for y, x in corners)
    if big_l == 0.0:
        return np.ones((h, w), dtype=np.float64)
    return np.exp(-lam * d / big_l)


def blend(img: Image, blurred: Image, alpha: np.ndarray) -> Image:
    """Per-pixel convex blend alpha*img + (1-alpha)*blurred, shared across channels."""
    if alpha.shape != (img.height, img.width):
        raise ContractViolation("alpha map shape does not match image")
    out = alpha[None, :, :] * img.data + (1.0 - alpha[None, :, :]) * blurred.data
    return Image(out)


def fovea_blur(img: Image, p: BlurParams) -> Image:
    """Foveated blur: full detail at the fixation center, blurred periphery."""
    kernel = radius_to_kernel(p.r)
    if kernel is None:
        return img
    center = p.center if p.center is not None else img.center()
    blurred = uniform_blur(img, kernel)
    alpha = fovea_alpha_map(img.height, img.width, p.lam, center)
    return blend(img, blurred, alpha)


def highfreq_energy(img: Image) -> float:
    """Sum of squared discrete Laplacian responses; a detail-content proxy."""
    x = img.data.astype(np.float64, copy=False)
    lap = (
        -4.0 * x
        + np.roll(x, 1, axis=1)
        + np.roll(x, -1, axis=1)
        + np.roll(x, 1, axis=2)
        + np.roll(x, -1, axis=2)
    )
    # rolled borders wrap around; drop the one-pixel frame
    core = lap[:, 1:-1, 1:-1] if img.height > 2 and img.width > 2 else lap
    return float(np.sum(core ** 2))
