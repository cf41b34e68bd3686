"""Brain encoder with hand-derived forward and backward passes.

Architecture: input linear projection, a residual branch (GELU, linear,
dropout at rate 0.3), the residual sum, then layer normalization, and
optionally row-wise L2 normalization of the output embedding. The learned
temperature lives here as a raw scalar that downstream code passes through
softplus.

All gradients are analytic, including the layer-norm and L2-normalization
Jacobians; the test suite checks every one of them against the
finite-difference oracle in numkernel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import erf

from .errors import ContractViolation
from .numkernel import Rng, softplus_inv

DROPOUT_RATE = 0.3
LAYERNORM_EPS = 1e-5
INIT_TEMPERATURE = 14.28  # softplus(tau_raw) at init, approx 1/0.07

PARAM_FIELDS = ("W1", "b1", "W2", "b2", "ln_gain", "ln_bias", "tau_raw")
DECAYED_FIELDS = frozenset({"W1", "W2"})


@dataclass(frozen=True)
class EncoderParams:
    W1: np.ndarray        # [input_dim, proj_dim]
    b1: np.ndarray        # [proj_dim]
    W2: np.ndarray        # [proj_dim, proj_dim]
    b2: np.ndarray        # [proj_dim]
    ln_gain: np.ndarray   # [proj_dim]
    ln_bias: np.ndarray   # [proj_dim]
    tau_raw: float

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.W1.shape[1]

    def map_arrays(self, fn) -> "EncoderParams":
        """Apply fn(name, value) to every field, returning new params."""
        return EncoderParams(**{name: fn(name, getattr(self, name)) for name in PARAM_FIELDS})

    def astype(self, dtype) -> "EncoderParams":
        return self.map_arrays(
            lambda name, v: float(v) if name == "tau_raw" else v.astype(dtype)
        )


@dataclass
class ForwardCache:
    """Activations the backward pass needs, captured during forward."""

    x: np.ndarray
    z: np.ndarray            # pre-activation of the residual branch
    act_z: np.ndarray        # post-GELU
    mask: Optional[np.ndarray]  # dropout keep mask (already includes 1/keep), None in eval
    pre_ln: np.ndarray       # residual sum entering layer norm
    ln_xhat: np.ndarray
    ln_inv_std: np.ndarray   # [N, 1]
    pre_norm: np.ndarray     # layer-norm output before optional L2 row normalization
    row_norms: Optional[np.ndarray]  # [N, 1] when normalize=True
    normalize: bool
    train: bool
    activation: str


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact erf-based GELU."""
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    big_phi = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return big_phi + x * phi


_ACTIVATIONS = {
    "gelu": (gelu, gelu_grad),
    # linearization hook used only by gradient tests
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def init_params(input_dim: int, proj_dim: int, rng: Rng, dtype=np.float32) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases, unit gains."""
    if input_dim < 1 or proj_dim < 1:
        raise ContractViolation("dimensions must be >= 1")
    g = rng.child("init")
    bound1 = 1.0 / np.sqrt(input_dim)
    bound2 = 1.0 / np.sqrt(proj_dim)
    return EncoderParams(
        W1=g.uniform(-bound1, bound1, (input_dim, proj_dim)).astype(dtype),
        b1=np.zeros(proj_dim, dtype=dtype),
        W2=g.uniform(-bound2, bound2, (proj_dim, proj_dim)).astype(dtype),
        b2=np.zeros(proj_dim, dtype=dtype),
        ln_gain=np.ones(proj_dim, dtype=dtype),
        ln_bias=np.zeros(proj_dim, dtype=dtype),
        tau_raw=float(softplus_inv(INIT_TEMPERATURE)),
    )


def forward(
    p: EncoderParams,
    x: np.ndarray,
    train: bool = False,
    rng: Optional[Rng] = None,
    normalize: bool = True,
    activation: str = "gelu",
) -> Tuple[np.ndarray, ForwardCache]:
    """Encode a batch [N, input_dim] into embeddings [N, proj_dim]."""
    if x.ndim != 2 or x.shape[1] != p.input_dim:
        raise ContractViolation(
            f"input shape {x.shape} incompatible with input_dim {p.input_dim}"
        )
    act, _ = _ACTIVATIONS[activation]

    z = x @ p.W1 + p.b1
    act_z = act(z)
    a = act_z @ p.W2 + p.b2
    if train:
        if rng is None:
            raise ContractViolation("training forward needs an rng for dropout")
        keep = 1.0 - DROPOUT_RATE
        mask = (rng.random(a.shape) < keep).astype(a.dtype) / keep
        dropped = a * mask
    else:
        mask = None
        dropped = a
    u = z + dropped

    mu = u.mean(axis=1, keepdims=True)
    var = ((u - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = (u - mu) * inv_std
    y = xhat * p.ln_gain + p.ln_bias

    if normalize:
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ContractViolation("embedding row collapsed to zero; cannot L2-normalize")
        h = y / norms
    else:
        norms = None
        h = y

    cache = ForwardCache(
        x=x, z=z, act_z=act_z, mask=mask, pre_ln=u,
        ln_xhat=xhat, ln_inv_std=inv_std, pre_norm=y, row_norms=norms,
        normalize=normalize, train=train, activation=activation,
    )
    return h, cache


def backward(
    p: EncoderParams, cache: ForwardCache, grad_h: np.ndarray
) -> Tuple[EncoderParams, np.ndarray]:
    """Analytic gradients of forward; returns (param grads, input grad)."""
    if grad_h.shape != cache.pre_norm.shape:
        raise ContractViolation(
            f"grad shape {grad_h.shape} does not match forward output {cache.pre_norm.shape}"
        )
    _, act_grad = _ACTIVATIONS[cache.activation]

    if cache.normalize:
        h = cache.pre_norm / cache.row_norms
        dy = (grad_h - np.sum(grad_h * h, axis=1, keepdims=True) * h) / cache.row_norms
    else:
        dy = grad_h

    d_gain = np.sum(dy * cache.ln_xhat, axis=0)
    d_bias = np.sum(dy, axis=0)
    dxhat = dy * p.ln_gain
    du = cache.ln_inv_std * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - cache.ln_xhat * (dxhat * cache.ln_xhat).mean(axis=1, keepdims=True)
    )

    da = du * cache.mask if cache.mask is not None else du
    d_w2 = cache.act_z.T @ da
    d_b2 = np.sum(da, axis=0)
    dg = da @ p.W2.T
    dz = du + dg * act_grad(cache.z)

    d_w1 = cache.x.T @ dz
    d_b1 = np.sum(dz, axis=0)
    grad_x = dz @ p.W1.T

    grads = EncoderParams(
        W1=d_w1, b1=d_b1, W2=d_w2, b2=d_b2,
        ln_gain=d_gain, ln_bias=d_bias, tau_raw=0.0,
    )
    return grads, grad_x


def add_tau_grad(grads: EncoderParams, grad_tau_raw: float) -> EncoderParams:
    """Merge the loss module's temperature gradient into encoder grads."""
    return replace(grads, tau_raw=grads.tau_raw + float(grad_tau_raw))
