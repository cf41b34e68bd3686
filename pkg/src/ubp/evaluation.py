"""Zero-shot retrieval metrics and the end-to-end evaluation report.

Queries are encoded brain samples; the gallery is the set of candidate image
embeddings. Ranking is by inner product (cosine, for normalized rows) with
ties broken deterministically by ascending gallery index. With exactly one
relevant image per query, average precision reduces to the reciprocal of the
true rank, so the mAP reported here is the mean reciprocal rank.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .data.formats import EpochTensor, FeatureCache
from .encoder import forward
from .errors import ContractViolation, DataError, DegenerateInput
from .numkernel import l2_normalize_rows
from .training import Checkpoint, TrainConfig


@dataclass
class RetrievalResult:
    ranked_indices: np.ndarray   # [Q, G] gallery indices, best first
    true_ranks: np.ndarray       # [Q] 1-based rank of the paired image
    gallery_size: int


def rank_gallery(h_b: np.ndarray, gallery: np.ndarray,
                 true_indices: Optional[Sequence[int]] = None) -> RetrievalResult:
    """Sort the gallery by descending similarity for every query.

    true_indices gives the paired gallery row per query; it defaults to
    query i pairing with gallery row i.
    """
    if h_b.ndim != 2 or gallery.ndim != 2 or h_b.shape[1] != gallery.shape[1]:
        raise ContractViolation(
            f"query/gallery dims differ: {h_b.shape} vs {gallery.shape}"
        )
    g = gallery.shape[0]
    if g < 2:
        raise ContractViolation("gallery needs at least 2 items")
    if true_indices is None:
        true_indices = np.arange(h_b.shape[0])
    true_indices = np.asarray(true_indices)
    scores = h_b @ gallery.T
    # stable sort on negated scores: ties resolve to the lower gallery index
    ranked = np.argsort(-scores, axis=1, kind="stable")
    positions = np.argsort(ranked, axis=1, kind="stable")
    true_ranks = positions[np.arange(h_b.shape[0]), true_indices] + 1
    return RetrievalResult(ranked_indices=ranked, true_ranks=true_ranks, gallery_size=g)


def topk_accuracy(res: RetrievalResult, k: int) -> float:
    if k < 1:
        raise ContractViolation("k must be >= 1")
    return float((res.true_ranks <= k).mean() * 100.0)


def map_score(res: RetrievalResult) -> float:
    """Mean reciprocal true rank, in percent."""
    return float((1.0 / res.true_ranks).mean() * 100.0)


def mean_similarity(h_b: np.ndarray, h_v_paired: np.ndarray) -> float:
    """Mean cosine of paired rows; temperature plays no part here."""
    if h_b.shape != h_v_paired.shape:
        raise ContractViolation("paired embeddings must have equal shapes")
    return float(np.sum(h_b * h_v_paired, axis=1).mean())


def _rank_average(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based), ties averaged."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ContractViolation("need two equal-length vectors of length >= 3")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc ** 2) * np.sum(yc ** 2))
    if denom == 0.0:
        raise DegenerateInput("zero variance in correlation input")
    return float(np.sum(xc * yc) / denom)


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ContractViolation("need two equal-length vectors of length >= 3")
    return pearson(_rank_average(x), _rank_average(y))


def evaluate(
    checkpoint: Checkpoint,
    test_epochs: EpochTensor,
    gallery_cache: FeatureCache,
    gallery_blur: str = "base",
) -> dict:
    """Encode test samples, rank the gallery, and assemble the report.

    gallery_blur: "base" encodes the gallery at the baseline blur level the
    model trained against; "none" would need unblurred embeddings, which
    coincide with "base" whenever the baseline radius is below 1 (it is, at
    the default 0.25), so both names resolve to the stored base level.
    """
    if gallery_blur not in ("base", "none"):
        raise ContractViolation(f"unknown gallery blur mode {gallery_blur!r}")
    cfg = TrainConfig(**checkpoint.config)
    gallery_ids = np.array(sorted(int(i) for i in np.unique(test_epochs.image_ids)),
                           dtype=np.uint32)
    for i in gallery_ids:
        if int(i) not in gallery_cache.embeddings:
            raise DataError(f"feature cache has no entry for image id {int(i)}")
    gallery = gallery_cache.matrix(gallery_ids, "base").astype(np.float64)
    gallery = l2_normalize_rows(gallery)

    x = test_epochs.data.reshape(test_epochs.n_samples, -1).astype(np.float32)
    if x.shape[1] != checkpoint.input_dim:
        raise DataError(
            f"test data dim {x.shape[1]} does not match checkpoint {checkpoint.input_dim}"
        )
    h, _ = forward(checkpoint.params, x, train=False,
                   normalize=cfg.normalize_embeddings)
    h = np.asarray(h, dtype=np.float64)

    id_to_row = {int(g): r for r, g in enumerate(gallery_ids)}
    true_rows = np.array([id_to_row[int(i)] for i in test_epochs.image_ids])
    res = rank_gallery(h, gallery, true_indices=true_rows)

    h_cos = l2_normalize_rows(h) if not cfg.normalize_embeddings else h
    paired = gallery[true_rows]
    report = {
        "subject": test_epochs.subject_id,
        "mode": cfg.mode,
        "gallery_size": int(res.gallery_size),
        "top1": round(topk_accuracy(res, 1), 6),
        "top5": round(topk_accuracy(res, min(5, res.gallery_size)), 6),
        "map": round(map_score(res), 6),
        "mean_similarity": round(mean_similarity(h_cos, paired), 6),
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
    return report


def report_json_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def rank_csv_bytes(res: RetrievalResult, query_ids, gallery_ids) -> bytes:
    """query_id, true_rank, then the first five ranked gallery ids."""
    gallery_ids = np.asarray(gallery_ids)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "true_rank", "top5_ids"])
    for q, (qid, rank) in enumerate(zip(query_ids, res.true_ranks)):
        top5 = gallery_ids[res.ranked_indices[q, :5]]
        writer.writerow([int(qid), int(rank), " ".join(str(int(t)) for t in top5)])
    return buf.getvalue().encode("utf-8")
