"""Epoch-tensor preprocessing: channel selection, cropping with decimation,
repetition averaging, and a trial-variability summary statistic."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence, Tuple, Union

import numpy as np

from ..errors import ContractViolation
from .formats import EpochTensor

# Standard 10-10 montage ordering used when a 63-channel recording arrives
# without explicit names.
STANDARD_63 = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8",
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT9", "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8", "FT10",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "TP10",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8",
    "O1", "Oz", "O2",
]

# The 17 channels over occipital and parietal cortex used for visual decoding.
OCCIPITAL_PARIETAL_17 = [
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2",
]


def select_channels(
    e: EpochTensor, names_or_indices: Sequence[Union[int, str]]
) -> EpochTensor:
    """Copy a channel subset, preserving the requested order."""
    indices = []
    for item in names_or_indices:
        if isinstance(item, (int, np.integer)):
            idx = int(item)
            if not 0 <= idx < e.n_channels:
                raise ContractViolation(f"channel index {idx} out of range")
        else:
            if e.channel_names is None:
                raise ContractViolation(
                    "tensor carries no channel names; select by index instead"
                )
            try:
                idx = e.channel_names.index(item)
            except ValueError:
                raise ContractViolation(f"unknown channel {item!r}") from None
        indices.append(idx)
    names = None
    if e.channel_names is not None:
        names = [e.channel_names[i] for i in indices]
    return replace(e, data=e.data[:, indices, :].copy(), channel_names=names)


def crop_and_downsample(
    e: EpochTensor, window_ms: Tuple[float, float], factor: int
) -> EpochTensor:
    """Crop to a millisecond window, then keep every factor-th sample.

    Plain decimation, no anti-alias filter. The window must land on sample
    boundaries and its length must divide evenly by the factor.
    """
    if factor < 1:
        raise ContractViolation("decimation factor must be >= 1")
    start_ms, end_ms = window_ms
    start_f = start_ms * e.sample_rate / 1000.0
    end_f = end_ms * e.sample_rate / 1000.0
    start, end = round(start_f), round(end_f)
    if abs(start_f - start) > 1e-9 or abs(end_f - end) > 1e-9:
        raise ContractViolation(
            f"window {window_ms} ms does not align to {e.sample_rate} Hz samples"
        )
    if not (0 <= start < end <= e.n_timepoints):
        raise ContractViolation(f"window {window_ms} ms outside the recording")
    if (end - start) % factor != 0:
        raise ContractViolation(
            f"window length {end - start} not divisible by factor {factor}"
        )
    data = e.data[:, :, start:end:factor].copy()
    return replace(e, data=data, sample_rate=e.sample_rate // factor)


def average_repetitions(e: EpochTensor) -> EpochTensor:
    """Average all trials sharing an image id; one output sample per id.

    Output order follows the first occurrence of each id.
    """
    seen, order = set(), []
    for i in e.image_ids:
        key = int(i)
        if key not in seen:
            seen.add(key)
            order.append(key)
    out = np.empty((len(order), e.n_channels, e.n_timepoints), dtype=np.float32)
    for row, key in enumerate(order):
        out[row] = e.data[e.image_ids == key].mean(axis=0)
    return replace(e, data=out, image_ids=np.array(order, dtype=np.uint32))


def subject_variability(e: EpochTensor) -> float:
    """Mean across-trial standard deviation, averaged over ids and positions.

    Needs at least two trials per image id; run this before repetition
    averaging.
    """
    per_id = []
    for key in np.unique(e.image_ids):
        trials = e.data[e.image_ids == key].astype(np.float64)
        if trials.shape[0] < 2:
            raise ContractViolation(
                f"image id {int(key)} has {trials.shape[0]} trial(s); need >= 2"
            )
        per_id.append(float(trials.std(axis=0, ddof=1).mean()))
    return float(np.mean(per_id))
