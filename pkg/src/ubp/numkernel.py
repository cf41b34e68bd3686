"""Dense-matrix numeric core.

Validated 2-D arrays, a few scalar activations shared by the encoder and the
loss, labeled deterministic random streams, and a central-difference gradient
oracle used by every gradient test in the suite.

Training runs in float32; all oracle and gradient-check code paths use
float64 (finite differences are unreliable at single precision).
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import ContractViolation, DegenerateInput, OracleFailure

_MASK64 = (1 << 64) - 1


def as_matrix(data, dtype=None) -> np.ndarray:
    """Validate and return a finite 2-D array."""
    a = np.asarray(data, dtype=dtype)
    if a.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("matrix contains NaN or Inf")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return a @ b


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row of ``m`` to unit Euclidean norm."""
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInput("cannot normalize an all-zero row")
    return m / norms


def softplus(x):
    """log(1 + e^x), computed without overflow for large x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def softplus_inv(y: float) -> float:
    """Inverse of softplus: the x with log(1 + e^x) = y. Requires y > 0."""
    if not y > 0:
        raise ContractViolation("softplus_inv requires a positive target")
    # x = log(e^y - 1) = y + log(1 - e^-y)
    return y + np.log1p(-np.exp(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function over every entry of x.

    This is the independent oracle that analytic backward passes are checked
    against; it never shares code with them.
    """
    if not h > 0:
        raise ContractViolation("finite-difference step must be positive")
    x = np.array(as_matrix(x), dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailure(f"non-finite evaluation at index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def _label_entropy(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


class Rng:
    """Seeded random source with labeled, independently derived sub-streams.

    Two Rng objects built from the same master seed and the same label path
    produce bit-identical sample sequences. Distinct labels give streams that
    do not collide, so initialization, dropout, and data shuffling can each
    own a stream without order coupling.
    """

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self._path = tuple(_path)
        entropy = [self.seed] + [_label_entropy(p) for p in self._path]
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, label: str) -> "Rng":
        """Derive an independent stream for a named purpose."""
        return Rng(self.seed, self._path + (str(label),))

    # thin forwards for the common draws
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self._path) or '<root>'})"
