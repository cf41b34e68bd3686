"""Training loop: per-batch blur-level lookup, encoder forward, symmetric
contrastive loss, tracker and radius-table updates, AdamW step, early
stopping on validation top-1, and checkpoint serialization.

Ordering inside one step is fixed: the blur level used for a sample is
whatever its table entry was before the step (assigned at the previous
visit); scores from the current batch update the tracker and then the table,
and only then do parameters move.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoder import (
    DECAYED_FIELDS,
    PARAM_FIELDS,
    EncoderParams,
    add_tau_grad,
    backward,
    forward,
    init_params,
)
from .errors import ConfigError, ContractViolation, DataError
from .data.formats import EpochTensor, FeatureCache
from .loss import sce_backward, similarity_matrix
from .numkernel import Rng
from .uncertainty import (
    LEVELS,
    RadiusTable,
    SimilarityTracker,
    confidence_interval,
    tracker_update,
    update_radius_table,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"UBPC"
CHECKPOINT_VERSION = 1

_MODE_DEFAULT_LR = {"intra": 1e-4, "inter": 1e-5}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 50
    lr: Optional[float] = None          # None -> per-mode default
    weight_decay: float = 1e-4
    r0: float = 0.25
    c: float = 10.0
    z: float = 1.96
    ema_momentum: float = 0.9
    blur_lambda: float = 2.0
    seed: int = 0
    mode: str = "intra"
    flip_radius_rule: bool = False
    normalize_embeddings: bool = True
    dynamic_blur: bool = True           # False trains a static-blur baseline
    patience: int = 10
    proj_dim: Optional[int] = None      # None -> vision embedding dim
    val_fraction: float = 0.05
    holdout_subject: Optional[str] = None

    def __post_init__(self):
        if self.mode not in _MODE_DEFAULT_LR:
            raise ConfigError(f"mode must be 'intra' or 'inter', got {self.mode!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for contrastive training")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        for name in ("weight_decay", "blur_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError("ema_momentum must lie in [0, 1)")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")

    @property
    def effective_lr(self) -> float:
        return self.lr if self.lr is not None else _MODE_DEFAULT_LR[self.mode]

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class AdamWState:
    step: int
    m: Dict[str, Union[np.ndarray, float]]
    v: Dict[str, Union[np.ndarray, float]]

    @classmethod
    def initial(cls, params: EncoderParams) -> "AdamWState":
        zeros = lambda v: 0.0 if np.isscalar(v) else np.zeros_like(v)
        return cls(
            step=0,
            m={n: zeros(getattr(params, n)) for n in PARAM_FIELDS},
            v={n: zeros(getattr(params, n)) for n in PARAM_FIELDS},
        )


def adamw_step(
    p: EncoderParams,
    g: EncoderParams,
    st: AdamWState,
    lr: float,
    wd: float,
) -> Tuple[EncoderParams, AdamWState]:
    """Decoupled-decay update; decay touches weight matrices only."""
    t = st.step + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    new_m, new_v, new_vals = {}, {}, {}
    for name in PARAM_FIELDS:
        theta = getattr(p, name)
        grad = getattr(g, name)
        if not np.isscalar(theta) and np.shape(grad) != np.shape(theta):
            raise ContractViolation(f"gradient shape mismatch for {name}")
        m = ADAM_BETA1 * st.m[name] + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * st.v[name] + (1.0 - ADAM_BETA2) * np.square(grad)
        m_hat = m / bc1
        v_hat = v / bc2
        decay = wd if name in DECAYED_FIELDS else 0.0
        update = m_hat / (np.sqrt(v_hat) + ADAM_EPS) + decay * theta
        new_theta = theta - lr * update
        if np.isscalar(theta):
            new_vals[name] = float(new_theta)
            new_m[name] = float(m)
            new_v[name] = float(v)
        else:
            new_vals[name] = new_theta.astype(theta.dtype)
            new_m[name] = m.astype(theta.dtype) if theta.dtype == np.float64 else m.astype(np.float32)
            new_v[name] = v.astype(new_m[name].dtype)
    return EncoderParams(**new_vals), AdamWState(step=t, m=new_m, v=new_v)


@dataclass
class TrainData:
    """Flattened training matrix plus per-sample ids."""

    x: np.ndarray          # [N, input_dim] float32
    ids: np.ndarray        # [N] uint32

    @classmethod
    def from_epochs(cls, e: EpochTensor) -> "TrainData":
        return cls(
            x=e.data.reshape(e.n_samples, -1).astype(np.float32),
            ids=e.image_ids.copy(),
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class TrainState:
    params: EncoderParams
    opt: AdamWState
    tracker: SimilarityTracker
    radii: RadiusTable
    epoch: int
    rng: Rng


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    interval: Optional[Tuple[float, float]]
    used_level_counts: Dict[str, int]
    assigned_branch_counts: Dict[str, int]
    n_batches: int
    val_top1: Optional[float] = None

    def to_json(self) -> str:
        rec = {
            "epoch": self.epoch,
            "loss": round(self.mean_loss, 6),
            "lo": None if self.interval is None else round(self.interval[0], 6),
            "hi": None if self.interval is None else round(self.interval[1], 6),
            "branch_counts": self.assigned_branch_counts,
            "used_levels": self.used_level_counts,
            "val_top1": None if self.val_top1 is None else round(self.val_top1, 4),
        }
        return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _check_cache_covers(cache: FeatureCache, ids: np.ndarray):
    for i in np.unique(ids):
        if int(i) not in cache.embeddings:
            raise DataError(f"feature cache has no entry for image id {int(i)}")


def train_epoch(
    state: TrainState,
    dataset: TrainData,
    cache: FeatureCache,
    cfg: TrainConfig,
) -> Tuple[TrainState, EpochLog]:
    """One pass over the shuffled dataset; returns updated state and a log."""
    _check_cache_covers(cache, dataset.ids)
    n = dataset.n
    order = state.rng.child(f"shuffle-e{state.epoch}").permutation(n)
    dropout_rng = state.rng.child(f"dropout-e{state.epoch}")

    params, opt, tracker, radii = state.params, state.opt, state.tracker, state.radii
    losses = []
    used_counts = {lv: 0 for lv in LEVELS}
    assigned_counts = {lv: 0 for lv in LEVELS}

    for start in range(0, n, cfg.batch_size):
        rows = order[start : start + cfg.batch_size]
        if len(rows) < 2:
            continue  # a stray single-sample batch cannot form a contrastive pair
        batch_ids = dataset.ids[rows]

        levels = radii.levels(batch_ids)
        for lv in levels:
            used_counts[lv] += 1
        h_v = cache.matrix(batch_ids, levels)

        h_b, fwd_cache = forward(
            params, dataset.x[rows], train=True, rng=dropout_rng,
            normalize=cfg.normalize_embeddings,
        )
        m = similarity_matrix(h_b, h_v, params.tau_raw)
        out = sce_backward(m, h_b, h_v, params.tau_raw, vision_frozen=True)
        losses.append(out.value)

        grads, _ = backward(params, fwd_cache, out.grad_hb)
        grads = add_tau_grad(grads, out.grad_tau_raw)

        tracker = tracker_update(tracker, out.diag_scores)
        if cfg.dynamic_blur and tracker.ready:
            radii = update_radius_table(
                radii, batch_ids, out.diag_scores, tracker, flip=cfg.flip_radius_rule
            )
            lo, hi = confidence_interval(tracker)
            for s in out.diag_scores:
                if s < lo:
                    assigned_counts["low"] += 1
                elif s > hi:
                    assigned_counts["high"] += 1
                else:
                    assigned_counts["base"] += 1
        else:
            assigned_counts["base"] += len(rows)

        params, opt = adamw_step(params, grads, opt, cfg.effective_lr, cfg.weight_decay)

    interval = confidence_interval(tracker) if tracker.ready else None
    log = EpochLog(
        epoch=state.epoch,
        mean_loss=float(np.mean(losses)) if losses else math.nan,
        interval=interval,
        used_level_counts=used_counts,
        assigned_branch_counts=assigned_counts,
        n_batches=len(losses),
    )
    new_state = TrainState(
        params=params, opt=opt, tracker=tracker, radii=radii,
        epoch=state.epoch + 1, rng=state.rng,
    )
    return new_state, log


@dataclass
class Checkpoint:
    params: EncoderParams
    opt: AdamWState
    tracker: SimilarityTracker
    radii: RadiusTable
    config: dict
    best_epoch: int
    best_val_top1: float

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    @property
    def proj_dim(self) -> int:
        return self.params.proj_dim


@dataclass
class TrainReport:
    logs: List[EpochLog]
    best_epoch: int
    best_val_top1: float
    subject: str
    mode: str
    seed: int
    config_hash: str
    train_subjects: List[str] = field(default_factory=list)

    def log_lines(self) -> str:
        return "\n".join(log.to_json() for log in self.logs) + "\n"


def _encode_and_rank_top1(
    params: EncoderParams,
    x: np.ndarray,
    ids: np.ndarray,
    gallery: np.ndarray,
    gallery_ids: np.ndarray,
    normalize: bool,
) -> float:
    h, _ = forward(params, x, train=False, normalize=normalize)
    ranking = np.argsort(-(h @ gallery.T), axis=1, kind="stable")
    hits = gallery_ids[ranking[:, 0]] == ids
    return float(hits.mean() * 100.0)


def fit(
    cfg: TrainConfig,
    datasets: Union[EpochTensor, Sequence[EpochTensor]],
    cache: FeatureCache,
) -> Tuple[Checkpoint, TrainReport]:
    """Train with early stopping; returns the best-validation checkpoint.

    Intra mode takes one subject's training epochs. Inter mode takes one
    EpochTensor per subject plus cfg.holdout_subject; the held-out subject
    contributes only validation queries, everything else is concatenated
    for training.
    """
    master = Rng(cfg.seed)

    if cfg.mode == "intra":
        if isinstance(datasets, (list, tuple)):
            if len(datasets) != 1:
                raise ConfigError("intra mode takes exactly one subject's data")
            train_epochs = datasets[0]
        else:
            train_epochs = datasets
        subject = train_epochs.subject_id
        train_subjects = [subject]
        val_source = train_epochs
        train_tensors = [train_epochs]
    else:
        if not isinstance(datasets, (list, tuple)) or len(datasets) < 2:
            raise ConfigError("inter mode requires at least 2 subjects")
        by_subject = {e.subject_id: e for e in datasets}
        if len(by_subject) != len(datasets):
            raise ConfigError("duplicate subject ids in inter-mode datasets")
        holdout = cfg.holdout_subject
        if holdout is None or holdout not in by_subject:
            raise ConfigError("inter mode needs holdout_subject naming one dataset")
        subject = holdout
        train_subjects = sorted(s for s in by_subject if s != holdout)
        train_tensors = [by_subject[s] for s in train_subjects]
        val_source = by_subject[holdout]

    if any(t.n_samples == 0 for t in train_tensors):
        raise DataError("empty training dataset")

    all_x = np.concatenate(
        [t.data.reshape(t.n_samples, -1).astype(np.float32) for t in train_tensors]
    )
    all_ids = np.concatenate([t.image_ids for t in train_tensors])

    # hold out a slice of image ids for early stopping; those samples never train
    unique_ids = np.unique(val_source.image_ids)
    if len(unique_ids) < 4:
        raise DataError("need at least 4 distinct images to carve a validation split")
    n_val = int(min(max(2, round(cfg.val_fraction * len(unique_ids))), len(unique_ids) // 2))
    val_ids = set(
        int(i) for i in master.child("val-split").gen.choice(unique_ids, n_val, replace=False)
    )

    val_x = val_source.data.reshape(val_source.n_samples, -1).astype(np.float32)
    val_rows = np.array([int(i) in val_ids for i in val_source.image_ids])
    val_data = TrainData(x=val_x[val_rows], ids=val_source.image_ids[val_rows])

    train_rows = np.array([int(i) not in val_ids for i in all_ids])
    train_data = TrainData(x=all_x[train_rows], ids=all_ids[train_rows])
    if train_data.n < 2:
        raise DataError("too few training samples after the validation split")

    _check_cache_covers(cache, train_data.ids)
    _check_cache_covers(cache, val_data.ids)

    proj_dim = cfg.proj_dim if cfg.proj_dim is not None else cache.dim
    if cache.dim != proj_dim:
        raise DataError(
            f"feature cache dim {cache.dim} does not match proj_dim {proj_dim}"
        )
    input_dim = train_data.x.shape[1]

    params = init_params(input_dim, proj_dim, master.child("encoder"))
    opt = AdamWState.initial(params)
    # radii stay at the baseline for the whole first epoch: the interval
    # activates only once a batch beyond one epoch's worth has been seen
    batches_per_epoch = math.ceil(train_data.n / cfg.batch_size)
    tracker = SimilarityTracker(
        momentum=cfg.ema_momentum, z=cfg.z, warmup_batches=batches_per_epoch + 1
    )
    radii = RadiusTable.initial(np.unique(train_data.ids), cfg.r0, cfg.c)
    state = TrainState(params=params, opt=opt, tracker=tracker, radii=radii,
                       epoch=0, rng=master.child("train"))

    gallery_ids = np.array(sorted(val_ids), dtype=np.uint32)
    val_gallery = cache.matrix(gallery_ids, "base")

    logs: List[EpochLog] = []
    best = None
    best_val = -np.inf
    best_epoch = -1
    stale = 0
    for _ in range(cfg.epochs):
        state, log = train_epoch(state, train_data, cache, cfg)
        log.val_top1 = _encode_and_rank_top1(
            state.params, val_data.x, val_data.ids, val_gallery, gallery_ids,
            cfg.normalize_embeddings,
        )
        logs.append(log)
        if log.val_top1 > best_val:
            best_val = log.val_top1
            best_epoch = log.epoch
            best = TrainState(
                params=state.params, opt=state.opt, tracker=state.tracker,
                radii=state.radii, epoch=state.epoch, rng=state.rng,
            )
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    checkpoint = Checkpoint(
        params=best.params, opt=best.opt, tracker=best.tracker, radii=best.radii,
        config=cfg.to_dict(), best_epoch=best_epoch, best_val_top1=best_val,
    )
    report = TrainReport(
        logs=logs, best_epoch=best_epoch, best_val_top1=best_val,
        subject=subject, mode=cfg.mode, seed=cfg.seed,
        config_hash=cfg.config_hash(), train_subjects=train_subjects,
    )
    return checkpoint, report
