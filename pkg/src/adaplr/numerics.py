"""Dense numeric primitives, stable probability transforms and seeded streams.

Matrices are plain ``float64`` numpy arrays; the helpers here only add the
shape and finiteness contracts the rest of the engine relies on.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericInputError, SamplingError

EPS_PROB = 1e-12
DTYPE = np.float64

# Purpose ids mixed into stream ids so each consumer owns an independent stream.
PURPOSE_INIT = 1
PURPOSE_AUGMENT = 2
PURPOSE_RESIDUAL = 3
PURPOSE_SHUFFLE = 4
PURPOSE_DATA = 5
PURPOSE_NOISE = 6


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox4x64 generator, whose output depends only on the key
    and the counter, so replays are identical on every platform.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed < 2**64 and 0 <= stream_id < 2**64):
            raise ValueError("seed and stream_id must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(
            np.random.Philox(key=self.seed | (self.stream_id << 64))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    # thin pass-throughs used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def random(self, size=None):
        return self.generator.random(size)


def stream_for(seed: int, purpose: int, index: int = 0) -> RngStream:
    """Stream for a (purpose, member/index) pair under a run seed."""
    return RngStream(seed, (purpose << 32) | index)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def check_finite(a, name: str = "input") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericInputError(f"{name} contains non-finite values")


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction, clamped to ``[EPS_PROB, 1 - EPS_PROB]``.

    Accepts a single logit vector or a batch (last axis = classes).
    """
    z = np.asarray(logits, dtype=DTYPE)
    if z.shape[-1] < 2:
        raise DimensionError("softmax needs at least two classes")
    check_finite(z, "logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, EPS_PROB, 1.0 - EPS_PROB)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    check_finite(z, "logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a, "left operand"), as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add_bias(a, bias) -> np.ndarray:
    a = as_matrix(a)
    bias = np.asarray(bias, dtype=DTYPE)
    if bias.shape != (a.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} does not match {a.shape[1]} columns")
    return a + bias


def relu(a) -> np.ndarray:
    return np.maximum(np.asarray(a, dtype=DTYPE), 0.0)


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def argmax_lowest(values) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    # np.argmax already returns the first maximal index.
    return np.argmax(np.asarray(values), axis=-1)


def draw_uniform_subset(stream: RngStream, universe: Sequence[int], k: int) -> np.ndarray:
    """Draw ``k`` distinct elements of ``universe``; every k-subset is equally likely."""
    items = np.asarray(universe)
    if k < 0 or k > len(items):
        raise SamplingError(f"cannot draw {k} elements from a universe of {len(items)}")
    if k == 0:
        return items[:0]
    return items[stream.permutation(len(items))[:k]]
