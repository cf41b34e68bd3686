"""Synthetic paired vision/brain data and the built-in toy vision encoder.

The generator renders procedural textures, derives each image's "brain
signal" from a deliberately degraded view of it (a blurred copy standing in
for the loss of peripheral high-frequency detail), and corrupts trials with
structured per-trial jitter plus white noise. Concepts are split so test
images never share a concept with training images, which makes retrieval on
the test gallery zero-shot.

A ground-truth object carrying the generating linear map is returned so
tests can decode with it directly and bound what any trained model can do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Tuple

import numpy as np

from ..blurprior import BlurParams, Image, fovea_blur, radius_to_kernel, uniform_blur
from ..errors import ContractViolation
from ..numkernel import Rng, l2_normalize_rows
from .formats import LEVELS, EpochTensor, FeatureCache

IMAGE_SIZE = 64          # rendered textures are square single-channel rasters
BRAIN_VIEW_SIZE = 16     # resolution of the view the synthetic brain encodes
SYSTEM_BLUR_RADIUS = 11  # kernel size of the degraded view's low-pass
DRIFT_RANK = 4           # dimensionality of the per-trial jitter subspace


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    highfreq_leak is the strength of the deterministic information loss
    between image and brain signal: 0 keeps full detail, 1 leaves only a
    low-passed view. attention_drift scales structured per-trial jitter and
    noise_sigma white per-entry noise; both are in units of the clean
    signal's per-entry standard deviation.
    """

    n_concepts: int
    images_per_concept: int = 1
    trials_per_image: int = 4
    channels: int = 8
    timepoints: int = 32
    mix_matrix_seed: int = 7
    noise_sigma: float = 0.1
    attention_drift: float = 0.0
    highfreq_leak: float = 0.7

    def __post_init__(self):
        for name in ("n_concepts", "images_per_concept", "trials_per_image",
                     "channels", "timepoints"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise ContractViolation("noise_sigma must be >= 0")
        if not 0.0 <= self.highfreq_leak <= 1.0:
            raise ContractViolation("highfreq_leak must lie in [0, 1]")


@dataclass
class GroundTruth:
    """The generating map, for oracle decoding and calibration."""

    mix_matrix: np.ndarray                      # [channels*timepoints, feat]
    drift_basis: np.ndarray                     # [channels*timepoints, DRIFT_RANK]
    brain_features: Dict[int, np.ndarray]       # id -> unit feature vector
    train_ids: List[int] = field(default_factory=list)
    test_ids: List[int] = field(default_factory=list)

    def clean_signal(self, image_id: int) -> np.ndarray:
        return self.mix_matrix @ self.brain_features[image_id]

    def oracle_top1(self, epochs: EpochTensor, gallery_ids: List[int]) -> float:
        """Top-1 percent of matched-template decoding with the true map."""
        templates = np.stack([self.clean_signal(i) for i in gallery_ids])
        templates = l2_normalize_rows(templates)
        queries = epochs.data.reshape(epochs.n_samples, -1).astype(np.float64)
        queries = l2_normalize_rows(queries)
        ranking = np.argsort(-(queries @ templates.T), axis=1, kind="stable")
        id_of = np.array(gallery_ids, dtype=np.uint32)
        hits = id_of[ranking[:, 0]] == epochs.image_ids
        return float(hits.mean() * 100.0)


@dataclass
class SyntheticDataset:
    train: EpochTensor
    test: EpochTensor
    images: Dict[int, Image]
    truth: GroundTruth


@lru_cache(maxsize=32)
def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Exact area-overlap box-averaging matrix [n_out, n_in]; rows sum to 1."""
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        lo, hi = o * scale, (o + 1) * scale
        for i in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            overlap = min(hi, i + 1.0) - max(lo, float(i))
            if overlap > 0:
                w[o, i] = overlap
    return w / w.sum(axis=1, keepdims=True)


def box_resize(img: Image, out_h: int, out_w: int) -> Image:
    """Area-average resample of every channel plane."""
    rh = _resize_weights(img.height, out_h)
    rw = _resize_weights(img.width, out_w)
    planes = np.einsum("oi,cij,pj->cop", rh, img.data.astype(np.float64), rw)
    return Image(np.clip(planes, 0.0, 1.0))


@lru_cache(maxsize=8)
def _projection(seed: int, dim: int, n_in: int) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, dim, n_in])))
    return gen.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, dim))


def toy_vision_encoder(img: Image, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for a frozen vision backbone.

    Box-resize to 32x32, flatten, project through a fixed seeded random
    matrix, L2-normalize. Sensitive to blur because the projection sees the
    resized pixels directly.
    """
    small = box_resize(img, 32, 32)
    flat = small.data.reshape(-1)
    proj = _projection(int(seed), int(dim), flat.size)
    v = flat @ proj
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ContractViolation("toy encoder produced a zero embedding")
    return v / norm


def build_feature_cache(
    images: Dict[int, Image],
    encode: Callable[[Image], np.ndarray],
    r_levels: Tuple[float, float, float] = (0.25 - 10.0, 0.25, 0.25 + 10.0),
    blur_lambda: float = 2.0,
    backbone_tag: str = "toy",
) -> FeatureCache:
    """Encode every image at the three blur levels into a feature cache."""
    probe = np.asarray(encode(next(iter(images.values()))))
    cache = FeatureCache(dim=int(probe.shape[0]), backbone_tag=backbone_tag)
    for image_id, img in images.items():
        entry = {}
        for level, r in zip(LEVELS, r_levels):
            blurred = fovea_blur(img, BlurParams(r=r, lam=blur_lambda))
            v = np.asarray(encode(blurred), dtype=np.float64)
            norm = np.linalg.norm(v)
            if norm == 0.0:
                raise ContractViolation(f"zero embedding for image {image_id}")
            entry[level] = (v / norm).astype(np.float32)
        cache.insert(image_id, entry)
    return cache


def build_fixed_radius_cache(
    images: Dict[int, Image],
    encode: Callable[[Image], np.ndarray],
    r: float,
    backbone_tag: str = "toy-fixed",
) -> FeatureCache:
    """Cache with all three levels equal to one fixed uniform blur radius.

    Used by radius-sweep experiments where the corruption is static.
    """
    kernel = radius_to_kernel(r)
    probe = np.asarray(encode(next(iter(images.values()))))
    cache = FeatureCache(dim=int(probe.shape[0]), backbone_tag=backbone_tag)
    for image_id, img in images.items():
        blurred = uniform_blur(img, kernel)
        v = np.asarray(encode(blurred), dtype=np.float64)
        v = (v / np.linalg.norm(v)).astype(np.float32)
        cache.insert(image_id, {level: v for level in LEVELS})
    return cache


def _render_texture(concept_rng: Rng, image_rng: Rng, size: int) -> Image:
    """Gratings in a mid-frequency band plus a soft blob, normalized to [0, 1].

    The concept stream fixes the family (grating frequencies/orientations,
    blob placement); the image stream perturbs phases, amplitudes, and the
    blob enough that two images of one concept are clearly distinct, the way
    two photos of one object are.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    canvas = np.zeros((size, size))
    cg = concept_rng.gen
    ig = image_rng.gen
    for _ in range(3):
        wavelength = cg.uniform(6.0, 20.0) * ig.uniform(0.9, 1.1)
        angle = cg.uniform(0.0, np.pi) + ig.uniform(-0.25, 0.25)
        phase = cg.uniform(0.0, 2 * np.pi) + ig.uniform(0.0, 2 * np.pi)
        amp = cg.uniform(0.5, 1.0) * ig.uniform(0.6, 1.4)
        k = 2 * np.pi / wavelength
        canvas += amp * np.sin(k * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    # fine-scale detail: visible to a full-resolution encoder, mostly gone
    # from any low-pass view of the image
    for _ in range(2):
        wavelength = cg.uniform(3.0, 6.0) * ig.uniform(0.9, 1.1)
        angle = cg.uniform(0.0, np.pi) + ig.uniform(-0.3, 0.3)
        phase = ig.uniform(0.0, 2 * np.pi)
        amp = cg.uniform(0.2, 0.4) * ig.uniform(0.6, 1.4)
        k = 2 * np.pi / wavelength
        canvas += amp * np.sin(k * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    cy, cx = cg.uniform(0.25 * size, 0.75 * size, 2) + ig.uniform(-0.1 * size, 0.1 * size, 2)
    width = cg.uniform(0.15 * size, 0.35 * size) * ig.uniform(0.8, 1.25)
    canvas += 1.5 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    canvas += ig.normal(0.0, 0.02, canvas.shape)
    lo, hi = canvas.min(), canvas.max()
    return Image(((canvas - lo) / (hi - lo))[None, :, :])


def _brain_feature(img: Image, gap_strength: float) -> np.ndarray:
    """Unit feature vector of the degraded view the synthetic brain encodes.

    gap_strength 0 means the brain sees the image faithfully; 1 means it
    sees only the low-passed copy, losing all fine detail.
    """
    kernel = radius_to_kernel(SYSTEM_BLUR_RADIUS)
    blurred = uniform_blur(img, kernel)
    mixed = (1.0 - gap_strength) * img.data + gap_strength * blurred.data
    view = Image(np.clip(mixed, 0.0, 1.0))
    flat = box_resize(view, BRAIN_VIEW_SIZE, BRAIN_VIEW_SIZE).data.reshape(-1)
    flat = flat - flat.mean()
    norm = np.linalg.norm(flat)
    if norm == 0.0:
        raise ContractViolation("degraded view has no contrast")
    return flat / norm


def _trials(
    truth: GroundTruth, ids: List[int], spec: SyntheticSpec, rng: Rng, subject: str
) -> EpochTensor:
    sig_len = spec.channels * spec.timepoints
    rows, row_ids = [], []
    g = rng.gen
    for image_id in ids:
        clean = truth.clean_signal(image_id)
        for _ in range(spec.trials_per_image):
            trial = clean.copy()
            if spec.attention_drift > 0:
                trial += spec.attention_drift * (truth.drift_basis @ g.normal(size=DRIFT_RANK))
            if spec.noise_sigma > 0:
                trial += spec.noise_sigma * g.normal(size=sig_len)
            rows.append(trial)
            row_ids.append(image_id)
    data = np.stack(rows).reshape(len(rows), spec.channels, spec.timepoints)
    return EpochTensor(
        data=data.astype(np.float32),
        sample_rate=250,
        image_ids=np.array(row_ids, dtype=np.uint32),
        subject_id=subject,
    )


def generate_synthetic(
    spec: SyntheticSpec,
    rng: Rng,
    test_fraction: float = 0.2,
    subject_id: str = "synth01",
) -> SyntheticDataset:
    """Render images, split concepts zero-shot, and synthesize trials."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation("test_fraction must lie in (0, 1)")
    n_test_concepts = max(1, round(spec.n_concepts * test_fraction))
    if n_test_concepts >= spec.n_concepts:
        raise ContractViolation("test split leaves no training concepts")

    split_rng = rng.child("split")
    concept_order = split_rng.permutation(spec.n_concepts)
    test_concepts = set(int(c) for c in concept_order[:n_test_concepts])

    # training concepts carry images_per_concept variations; zero-shot test
    # concepts contribute a single gallery image each
    images: Dict[int, Image] = {}
    concept_of: Dict[int, int] = {}
    render_rng = rng.child("render")
    for concept in range(spec.n_concepts):
        concept_rng = render_rng.child(f"concept{concept}")
        per_concept = 1 if concept in test_concepts else spec.images_per_concept
        for j in range(per_concept):
            image_id = concept * spec.images_per_concept + j
            images[image_id] = _render_texture(
                concept_rng, render_rng.child(f"image{image_id}"), IMAGE_SIZE
            )
            concept_of[image_id] = concept

    mix_gen = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(spec.mix_matrix_seed)]))
    )
    feat_len = BRAIN_VIEW_SIZE * BRAIN_VIEW_SIZE
    sig_len = spec.channels * spec.timepoints
    # unit-norm features through N(0,1) mix rows give clean-signal entries of
    # unit variance, so noise_sigma and attention_drift read as per-entry SNR
    truth = GroundTruth(
        mix_matrix=mix_gen.normal(0.0, 1.0, (sig_len, feat_len)),
        drift_basis=mix_gen.normal(0.0, 1.0, (sig_len, DRIFT_RANK)) / np.sqrt(DRIFT_RANK),
        brain_features={
            i: _brain_feature(img, spec.highfreq_leak) for i, img in images.items()
        },
    )

    truth.train_ids = sorted(i for i, c in concept_of.items() if c not in test_concepts)
    truth.test_ids = sorted(i for i, c in concept_of.items() if c in test_concepts)

    train = _trials(truth, truth.train_ids, spec, rng.child("train-trials"), subject_id)
    test = _trials(truth, truth.test_ids, spec, rng.child("test-trials"), subject_id)
    return SyntheticDataset(train=train, test=test, images=images, truth=truth)
