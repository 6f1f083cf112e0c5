"""Ensemble of classifiers and the moving-average consensus over epochs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, NotReadyError, StateError
from .model import AdamState, ClassifierModel
from .numerics import RngStream, as_matrix, softmax


@dataclass
class Member:
    model: ClassifierModel
    optimizer: AdamState
    stream: Optional[RngStream] = None


@dataclass
class EnsembleState:
    members: list = field(default_factory=list)

    def __post_init__(self):
        if self.members:
            ref = self.members[0].model
            for m in self.members[1:]:
                if (m.model.input_dim, m.model.num_classes) != (ref.input_dim, ref.num_classes):
                    raise DimensionError("ensemble members disagree on input_dim or C")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def weights(self) -> np.ndarray:
        # member weights are fixed to one
        return np.ones(len(self.members))

    @property
    def num_classes(self) -> int:
        return self.members[0].model.num_classes


def member_logits(state: EnsembleState, batch) -> np.ndarray:
    """Per-member logits, shape ``(N_e, rows, C)``."""
    if not state.members:
        raise StateError("ensemble has no members")
    x = as_matrix(batch, "batch")
    return np.stack([m.model.predict_logits(x) for m in state.members])


def ensemble_logits(state: EnsembleState, batch) -> np.ndarray:
    """Unweighted sum (all member weights are 1) of member logits."""
    return member_logits(state, batch).sum(axis=0)


class ConfidenceHistory:
    """Per-sample ring buffer of the last ``capacity`` summed ensemble logit snapshots."""

    def __init__(self, n_samples: int, num_classes: int, n_members: int, capacity: int = 10):
        if capacity < 1 or n_members < 1:
            raise ValueError("capacity and n_members must be >= 1")
        self.n_samples = n_samples
        self.num_classes = num_classes
        self.n_members = n_members
        self.capacity = capacity
        self.buffer = np.zeros((n_samples, capacity, num_classes))
        self.fill = np.zeros(n_samples, dtype=np.int64)
        self.head = np.zeros(n_samples, dtype=np.int64)  # next slot to write

    def push(self, summed_logits) -> None:
        """Append one snapshot (``n_samples x C`` summed member logits), evicting the oldest."""
        z = np.asarray(summed_logits, dtype=np.float64)
        if z.shape != (self.n_samples, self.num_classes):
            raise StateError(f"snapshot shape {z.shape} != {(self.n_samples, self.num_classes)}")
        if not np.all(np.isfinite(z)):
            raise StateError("snapshot contains non-finite logits")
        rows = np.arange(self.n_samples)
        self.buffer[rows, self.head] = z
        self.head = (self.head + 1) % self.capacity
        self.fill = np.minimum(self.fill + 1, self.capacity)

    def stored(self, index: int) -> np.ndarray:
        """Stored snapshots of one sample, oldest first."""
        f = int(self.fill[index])
        order = (self.head[index] - f + np.arange(f)) % self.capacity
        return self.buffer[index, order]

    def mean_logits(self) -> np.ndarray:
        """``(1 / (fill * N_e)) * sum`` over stored snapshots, for all samples."""
        if np.any(self.fill == 0):
            raise NotReadyError("some samples have no recorded snapshot")
        # unfilled slots are still zero, so summing the whole buffer is exact
        return self.buffer.sum(axis=1) / (self.fill * self.n_members)[:, None]


def record_epoch_snapshot(history: ConfidenceHistory, state: EnsembleState, features,
                          batch_size: int = 1024) -> ConfidenceHistory:
    """Evaluate the ensemble on clean (unaugmented) features and push one snapshot."""
    x = as_matrix(features, "features")
    if x.shape[0] != history.n_samples:
        raise StateError(f"dataset has {x.shape[0]} samples, history tracks {history.n_samples}")
    if state.size != history.n_members:
        raise StateError("ensemble size differs from the history's member count")
    chunks = [ensemble_logits(state, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    history.push(np.concatenate(chunks))
    return history


def consensus_probs(history: ConfidenceHistory, index: int) -> np.ndarray:
    """Softmax of the averaged stored logits of one sample."""
    f = int(history.fill[index])
    if f == 0:
        raise NotReadyError(f"sample {index} has no recorded snapshot")
    # same reduction as mean_logits() so per-sample and batch paths agree bitwise
    return softmax(history.buffer[index].sum(axis=0) / (f * history.n_members))


def consensus_all(history: ConfidenceHistory) -> np.ndarray:
    """Consensus probabilities for every sample, shape ``(n_samples, C)``."""
    return softmax(history.mean_logits())
