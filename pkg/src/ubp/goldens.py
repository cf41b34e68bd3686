"""Golden blur fixtures shared with external reimplementations.

Writes a deterministic test raster plus its foveated-blur outputs for a few
parameter sets, with a JSON manifest describing each file. Any independent
implementation of the blur math can read the inputs, apply its own blur, and
compare against these outputs (the agreed tolerance is 1e-5 per pixel).

Regenerate with:  python3 -m ubp.goldens <directory>
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .blurprior import BlurParams, Image, fovea_blur
from .data.formats import write_pnm, write_raster

GOLDEN_CASES = [
    {"name": "r11_lam2", "r": 11.0, "lam": 2.0},
    {"name": "r10p25_lam2", "r": 10.25, "lam": 2.0},
    {"name": "r5_lam0p5", "r": 5.0, "lam": 0.5},
    {"name": "r0p25_identity", "r": 0.25, "lam": 2.0},
]
TOLERANCE = 1e-5


def golden_input(size: int = 64) -> Image:
    """Three-channel raster with gratings, a blob, and a hard edge."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r_plane = 0.5 + 0.45 * np.sin(2 * np.pi * xx / 7.0)
    g_plane = 0.5 + 0.45 * np.sin(2 * np.pi * (xx + yy) / 13.0)
    b_plane = np.exp(-((yy - size / 3) ** 2 + (xx - size / 2) ** 2) / (2 * (size / 6) ** 2))
    b_plane = b_plane + (xx > size / 2) * 0.3
    stack = np.stack([r_plane, g_plane, b_plane / b_plane.max()])
    return Image(np.clip(stack, 0.0, 1.0))


def write_golden_set(directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img = golden_input()
    write_raster(directory / "input.ubpi", img)
    write_pnm(directory / "input.ppm", img)
    cases = []
    for case in GOLDEN_CASES:
        out = fovea_blur(img, BlurParams(r=case["r"], lam=case["lam"]))
        name = f"blur_{case['name']}.ubpi"
        write_raster(directory / name, out)
        cases.append({
            "file": name, "r": case["r"], "lambda": case["lam"],
            "center": list(img.center()), "tolerance": TOLERANCE,
        })
    manifest = {
        "input": "input.ubpi",
        "input_ppm": "input.ppm",
        "height": img.height, "width": img.width, "channels": img.channels,
        "cases": cases,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "goldens"
    write_golden_set(target)
    print(f"golden fixtures written to {target}")
