"""Vision backbones for feature extraction.

Real pretrained weights load lazily through open_clip when the extra is
installed. The built-in "toy:<dim>:<seed>" backbone needs nothing beyond
numpy and matches the behavior of a frozen random-projection encoder: box
average to 32x32, flatten, fixed seeded projection, L2-normalize. It exists
so the full pipeline can be exercised on machines without model weights.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

OPENCLIP_WEIGHTS = {
    # backbone name -> (architecture, pretrained tag)
    "RN50": ("RN50", "openai"),
    "RN101": ("RN101", "openai"),
    "ViT-B-16": ("ViT-B-16", "openai"),
    "ViT-B-32": ("ViT-B-32", "openai"),
    "ViT-L-14": ("ViT-L-14", "openai"),
    "ViT-H-14": ("ViT-H-14", "laion2b_s32b_b79k"),
    "ViT-g-14": ("ViT-g-14", "laion2b_s34b_b88k"),
    "ViT-bigG-14": ("ViT-bigG-14", "laion2b_s39b_b160k"),
}


@lru_cache(maxsize=4)
def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        lo, hi = o * scale, (o + 1) * scale
        for i in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            overlap = min(hi, i + 1.0) - max(lo, float(i))
            if overlap > 0:
                w[o, i] = overlap
    return w / w.sum(axis=1, keepdims=True)


@lru_cache(maxsize=8)
def _projection(seed: int, dim: int, n_in: int) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, dim, n_in])))
    return gen.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, dim))


class ToyBackbone:
    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def encode(self, planes: np.ndarray) -> np.ndarray:
        rh = _resize_weights(planes.shape[1], 32)
        rw = _resize_weights(planes.shape[2], 32)
        small = np.einsum("oi,cij,pj->cop", rh, planes, rw)
        flat = small.reshape(-1)
        v = flat @ _projection(self.seed, self.dim, flat.size)
        return v / np.linalg.norm(v)


class OpenClipBackbone:
    def __init__(self, name: str):
        try:
            import open_clip
            import torch
        except ImportError:
            raise RuntimeError(
                f"backbone {name!r} needs the [clip] extra (torch + open_clip_torch)"
            ) from None
        arch, tag = OPENCLIP_WEIGHTS[name]
        self._torch = torch
        model, _, preprocess = open_clip.create_model_and_transforms(arch, pretrained=tag)
        model.eval()
        self.model = model
        self.preprocess = preprocess
        self.dim = model.visual.output_dim

    def encode(self, planes: np.ndarray) -> np.ndarray:
        from PIL import Image as PilImage

        torch = self._torch
        arr = (np.moveaxis(planes, 0, -1) * 255.0).round().astype(np.uint8)
        if arr.shape[-1] == 1:
            arr = np.repeat(arr, 3, axis=-1)
        tensor = self.preprocess(PilImage.fromarray(arr)).unsqueeze(0)
        with torch.no_grad():
            v = self.model.encode_image(tensor)[0].float().cpu().numpy()
        return v / np.linalg.norm(v)


def make_backbone(name: str):
    """'toy:<dim>[:<seed>]' or one of the known pretrained names."""
    if name.startswith("toy"):
        parts = name.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 64
        seed = int(parts[2]) if len(parts) > 2 else 0
        return ToyBackbone(dim=dim, seed=seed)
    if name in OPENCLIP_WEIGHTS:
        return OpenClipBackbone(name)
    raise ValueError(f"unknown backbone {name!r}; known: toy:<dim>[:<seed>], "
                     + ", ".join(OPENCLIP_WEIGHTS))
