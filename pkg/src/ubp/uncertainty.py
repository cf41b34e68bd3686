"""Running Gaussian model of paired similarity scores and the radius rule.

Per-batch diagonal similarity scores feed an exponentially averaged mean and
variance. Once a warmup period has passed, the tracker exposes a normal-theory
confidence interval; scores falling outside it move their sample's blur
radius to one of two outer values, scores inside keep the baseline.

The published three-branch rule sends low-similarity pairs to the REDUCED
radius. Its surrounding prose argues the opposite direction, so a flip flag
implements the prose reading; both are exact three-valued step functions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np

from .errors import ContractViolation, NotReadyError

LEVEL_LOW = "low"
LEVEL_BASE = "base"
LEVEL_HIGH = "high"
LEVELS = (LEVEL_LOW, LEVEL_BASE, LEVEL_HIGH)


@dataclass(frozen=True)
class SimilarityTracker:
    mu_hat: float = 0.0
    var_hat: float = 0.0
    momentum: float = 0.9
    z: float = 1.96
    warmup_batches: int = 0
    batches_seen: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation("momentum must lie in [0, 1)")
        if self.var_hat < 0:
            raise ContractViolation("variance estimate cannot be negative")

    @property
    def ready(self) -> bool:
        return self.batches_seen >= self.warmup_batches and self.batches_seen > 0


def batch_stats(scores: np.ndarray) -> Tuple[float, float]:
    """Sample mean and unbiased (n-1 divisor) sample variance."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 2:
        raise ContractViolation("need a vector of at least 2 scores")
    mean = float(scores.mean())
    var = float(scores.var(ddof=1))
    return mean, var


def tracker_update(t: SimilarityTracker, scores: np.ndarray) -> SimilarityTracker:
    """Fold one batch of scores into the running estimates.

    The first batch initializes the estimates directly; later batches blend
    with momentum m: new = m*old + (1-m)*batch.
    """
    mean, var = batch_stats(scores)
    if t.batches_seen == 0:
        mu, vr = mean, var
    else:
        m = t.momentum
        mu = m * t.mu_hat + (1.0 - m) * mean
        vr = m * t.var_hat + (1.0 - m) * var
    return replace(t, mu_hat=mu, var_hat=vr, batches_seen=t.batches_seen + 1)


def confidence_interval(t: SimilarityTracker) -> Tuple[float, float]:
    """(mu - z*sigma, mu + z*sigma) from the running estimates."""
    if not t.ready:
        raise NotReadyError(
            f"interval requested after {t.batches_seen} batches; warmup is {t.warmup_batches}"
        )
    sigma = float(np.sqrt(t.var_hat))
    return t.mu_hat - t.z * sigma, t.mu_hat + t.z * sigma


def assign_radius(
    s: float, lo: float, hi: float, r0: float, c: float, flip: bool = False
) -> float:
    """Three-branch radius rule; the closed interval [lo, hi] keeps r0."""
    if lo > hi:
        raise ContractViolation("interval is inverted")
    if s < lo:
        return r0 + c if flip else r0 - c
    if s > hi:
        return r0 - c if flip else r0 + c
    return r0


def radius_level(r: float, r0: float, c: float) -> str:
    """Name the blur level a stored radius corresponds to."""
    if r == r0 - c:
        return LEVEL_LOW
    if r == r0 + c:
        return LEVEL_HIGH
    if r == r0:
        return LEVEL_BASE
    raise ContractViolation(f"radius {r} is not one of the three supported values")


@dataclass(frozen=True)
class RadiusTable:
    """Per-training-sample blur radius, keyed by sample id."""

    r0: float
    c: float
    ids: np.ndarray     # unique sample ids, uint32
    radii: np.ndarray   # float64, parallel to ids

    @classmethod
    def initial(cls, ids, r0: float, c: float) -> "RadiusTable":
        ids = np.asarray(ids, dtype=np.uint32)
        if len(np.unique(ids)) != len(ids):
            raise ContractViolation("sample ids must be unique")
        return cls(r0=float(r0), c=float(c), ids=ids,
                   radii=np.full(len(ids), float(r0), dtype=np.float64))

    def _row_index(self) -> Dict[int, int]:
        return {int(i): k for k, i in enumerate(self.ids)}

    def lookup(self, ids) -> np.ndarray:
        index = self._row_index()
        try:
            rows = [index[int(i)] for i in ids]
        except KeyError as e:
            raise ContractViolation(f"unknown sample id {e.args[0]}") from None
        return self.radii[rows]

    def levels(self, ids) -> list:
        return [radius_level(r, self.r0, self.c) for r in self.lookup(ids)]


def update_radius_table(
    table: RadiusTable,
    ids,
    scores,
    t: SimilarityTracker,
    flip: bool = False,
) -> RadiusTable:
    """Reassign the radius of every visited sample from its current score."""
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=np.float64)
    if ids.shape != scores.shape:
        raise ContractViolation("ids and scores must have equal length")
    if ids.size == 0:
        return table
    lo, hi = confidence_interval(t)
    index = table._row_index()
    new_radii = table.radii.copy()
    for i, s in zip(ids, scores):
        key = int(i)
        if key not in index:
            raise ContractViolation(f"unknown sample id {key}")
        new_radii[index[key]] = assign_radius(float(s), lo, hi, table.r0, table.c, flip)
    return replace(table, radii=new_radii)
