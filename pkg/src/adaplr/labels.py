"""Pseudo-label inference, residual-label sampling, adaptive threshold and reassignment."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ensemble import ConfidenceHistory, consensus_all
from .errors import ArgumentError, ConfigError, DimensionError, FormatError, StateError
from .model import ClassifierModel
from .numerics import RngStream, as_matrix, softmax

CSV_HEADER = ["sample_id", "pseudo_label", "confidence", "true_label"]


@dataclass
class PseudoLabelSet:
    labels: np.ndarray
    confidences: np.ndarray
    num_classes: int
    epoch: int = 0
    true_labels: Optional[np.ndarray] = None   # metrics only

    def __len__(self) -> int:
        return len(self.labels)

    def training_view(self) -> "PseudoLabelSet":
        """Copy without ground truth; the only form training code receives."""
        return PseudoLabelSet(self.labels.copy(), self.confidences.copy(), self.num_classes, self.epoch)

    def noise_rate(self) -> Optional[float]:
        if self.true_labels is None:
            return None
        return float(np.mean(self.labels != self.true_labels))

    def accuracy(self) -> Optional[float]:
        rate = self.noise_rate()
        return None if rate is None else 1.0 - rate


def _infer_from_logits(logits: np.ndarray, true_labels=None) -> PseudoLabelSet:
    y = np.argmax(logits, axis=1)      # first maximum: ties go to the lowest index
    p = softmax(logits)
    conf = p[np.arange(len(y)), y]
    truth = None if true_labels is None else np.asarray(true_labels).copy()
    return PseudoLabelSet(y, conf, logits.shape[1], 0, truth)


def infer_pseudo_labels_aggregated(source_model: ClassifierModel, features,
                                   num_classes: Optional[int] = None,
                                   true_labels=None) -> PseudoLabelSet:
    """Pseudo-labels from the argmax of a single (aggregated-source) model."""
    x = as_matrix(features, "features")
    if num_classes is not None and source_model.num_classes != num_classes:
        raise DimensionError(f"model has C={source_model.num_classes}, task has C={num_classes}")
    return _infer_from_logits(source_model.predict_logits(x), true_labels)


def infer_pseudo_labels_late_fusion(models: Sequence[ClassifierModel], features,
                                    true_labels=None) -> PseudoLabelSet:
    """Pseudo-labels from the argmax of the summed logits of several source models."""
    if not models:
        raise ArgumentError("late fusion needs at least one source model")
    if len({m.num_classes for m in models}) != 1:
        raise DimensionError("source models disagree on C")
    x = as_matrix(features, "features")
    total = models[0].predict_logits(x)
    for m in models[1:]:
        total = total + m.predict_logits(x)
    return _infer_from_logits(total, true_labels)


# ------------------------------------------------------------- residual labels

def check_residual_config(num_classes: int, n_members: int, n_rl: int) -> None:
    if n_members < 1 or n_rl < 1:
        raise ConfigError("N_e and N_RL must be >= 1")
    if n_members * n_rl > num_classes - 1:
        raise ConfigError(f"N_e*N_RL = {n_members * n_rl} exceeds C-1 = {num_classes - 1}")


def default_n_rl(num_classes: int, n_members: int) -> int:
    return max(1, (num_classes - 1) // n_members)


def sample_disjoint_residual_labels(stream: RngStream, pseudo_label: int, num_classes: int,
                                    n_members: int, n_rl: int) -> np.ndarray:
    """Disjoint residual sets for one sample, shape ``(n_members, n_rl)``.

    The complement of ``pseudo_label`` is shuffled uniformly and its first
    ``n_members * n_rl`` entries are cut into consecutive blocks.
    """
    check_residual_config(num_classes, n_members, n_rl)
    complement = np.delete(np.arange(num_classes), pseudo_label)
    shuffled = complement[stream.permutation(len(complement))]
    return shuffled[: n_members * n_rl].reshape(n_members, n_rl)


def sample_disjoint_residual_batch(stream: RngStream, pseudo_labels, num_classes: int,
                                   n_members: int, n_rl: int) -> np.ndarray:
    """Vectorized form for a batch: shape ``(B, n_members, n_rl)``.

    Each row is an independent uniform permutation of the complement (argsort
    of iid uniforms, with the pseudo-label pushed to the end).
    """
    check_residual_config(num_classes, n_members, n_rl)
    y = np.asarray(pseudo_labels)
    keys = stream.random((len(y), num_classes))
    keys[np.arange(len(y)), y] = 2.0
    order = np.argsort(keys, axis=1, kind="stable")
    return order[:, : n_members * n_rl].reshape(len(y), n_members, n_rl)


# ----------------------------------------------------- threshold / reassignment

def compute_gamma(label_set, alpha: float) -> float:
    """Fraction of samples whose confidence strictly exceeds ``alpha``."""
    conf = np.asarray(getattr(label_set, "confidences", label_set))
    if conf.size == 0:
        raise ArgumentError("cannot compute gamma of an empty label set")
    return int(np.count_nonzero(conf > alpha)) / conf.size


def confidences_from_history(label_set: PseudoLabelSet, history: ConfidenceHistory) -> PseudoLabelSet:
    """Refresh confidences with the consensus probability of the current labels."""
    p = consensus_all(history)
    conf = p[np.arange(len(label_set)), label_set.labels]
    return replace(label_set, confidences=conf)


def reassign(label_set: PseudoLabelSet, history: ConfidenceHistory,
             gamma: float) -> tuple[PseudoLabelSet, int]:
    """Move every sample with consensus confidence below ``gamma`` to the consensus argmax.

    Returns the new label set and the number of labels that actually changed.
    """
    if history.n_samples != len(label_set):
        raise StateError("history and label set track different sample counts")
    p = consensus_all(history)
    rows = np.arange(len(label_set))
    conf = p[rows, label_set.labels]
    move = conf < gamma
    labels = np.where(move, np.argmax(p, axis=1), label_set.labels)
    conf = np.where(move, p[rows, labels], conf)
    out = replace(label_set, labels=labels, confidences=conf, epoch=label_set.epoch + 1)
    return out, int(np.count_nonzero(labels != label_set.labels))


def select_hcs(label_set, alpha: float) -> np.ndarray:
    """Indices of high-confidence samples (confidence strictly above ``alpha``)."""
    conf = np.asarray(getattr(label_set, "confidences", label_set))
    return np.flatnonzero(conf > alpha)


# ------------------------------------------------------------------------ I/O

def write_label_csv(label_set: PseudoLabelSet, path) -> Path:
    path = Path(path)
    with_truth = label_set.true_labels is not None
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER if with_truth else CSV_HEADER[:3])
        for i, (y, c) in enumerate(zip(label_set.labels, label_set.confidences)):
            row = [i, int(y), repr(float(c))]
            if with_truth:
                row.append(int(label_set.true_labels[i]))
            w.writerow(row)
    return path


def read_label_csv(path, num_classes: int) -> PseudoLabelSet:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] not in (CSV_HEADER, CSV_HEADER[:3]):
        raise FormatError(f"{path}: unexpected header {rows[:1]}")
    body = rows[1:]
    try:
        ids = [int(r[0]) for r in body]
        labels = np.array([int(r[1]) for r in body], dtype=np.int64)
        conf = np.array([float(r[2]) for r in body])
        truth = np.array([int(r[3]) for r in body], dtype=np.int64) if len(rows[0]) == 4 else None
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    if ids != list(range(len(body))):
        raise FormatError(f"{path}: sample ids must be 0..N-1 in order")
    return PseudoLabelSet(labels, conf, num_classes, 0, truth)
