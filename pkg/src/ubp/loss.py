"""Similarity matrix and symmetric contrastive cross-entropy.

The batch similarity matrix scales brain/vision inner products by a learned
softplus temperature. The loss averages the negative log row-softmax of the
diagonal (brain-to-image direction) and the same over columns
(image-to-brain), with max-subtraction stabilization. Backward is analytic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numkernel import sigmoid, softplus


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_hb: np.ndarray
    grad_hv: np.ndarray
    grad_tau_raw: float
    diag_scores: np.ndarray


def similarity_matrix(h_b: np.ndarray, h_v: np.ndarray, tau_raw: float) -> np.ndarray:
    """M[i, j] = <h_b[i], h_v[j]> * softplus(tau_raw)."""
    if h_b.ndim != 2 or h_v.ndim != 2 or h_b.shape[1] != h_v.shape[1]:
        raise ContractViolation(
            f"embedding dims differ: {h_b.shape} vs {h_v.shape}"
        )
    return (h_b @ h_v.T) * softplus(tau_raw)


def _log_softmax_rows(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def sce_loss(m: np.ndarray) -> float:
    """Mean row-direction plus mean column-direction diagonal cross-entropy."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"similarity matrix must be square, got {m.shape}")
    n = m.shape[0]
    if n < 2:
        raise ContractViolation("contrastive loss needs at least 2 pairs")
    diag = np.arange(n)
    row_lp = _log_softmax_rows(m)[diag, diag]
    col_lp = _log_softmax_rows(m.T)[diag, diag]
    return float(-(row_lp.mean() + col_lp.mean()))


def sce_backward(
    m: np.ndarray,
    h_b: np.ndarray,
    h_v: np.ndarray,
    tau_raw: float,
    vision_frozen: bool = True,
) -> LossOutput:
    """Loss value plus gradients through M = h_b h_v^T softplus(tau)."""
    if m.shape != (h_b.shape[0], h_v.shape[0]):
        raise ContractViolation("similarity matrix shape inconsistent with embeddings")
    n = m.shape[0]
    value = sce_loss(m)

    p_row = np.exp(_log_softmax_rows(m))
    p_col = np.exp(_log_softmax_rows(m.T)).T
    eye = np.eye(n, dtype=m.dtype)
    d_m = ((p_row - eye) + (p_col - eye)) / n

    scale = softplus(tau_raw)
    grad_hb = (d_m * scale) @ h_v
    if vision_frozen:
        grad_hv = np.zeros_like(h_v)
    else:
        grad_hv = (d_m * scale).T @ h_b
    raw_products = h_b @ h_v.T
    grad_tau_raw = float(np.sum(d_m * raw_products) * sigmoid(tau_raw))

    return LossOutput(
        value=value,
        grad_hb=grad_hb,
        grad_hv=grad_hv,
        grad_tau_raw=grad_tau_raw,
        diag_scores=np.diagonal(m).copy(),
    )
