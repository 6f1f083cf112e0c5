"""Adaptive pseudo-label refinement for source-free domain adaptation.

A source model pseudo-labels an unlabeled target set; an ensemble trained
with negative learning on disjoint residual labels refines those labels,
and a single target model is then trained on the confident ones.
"""

from .data import (
    DIGIT_MAPPING, AugmentationSpec, DigitTask, LabeledDataset, ShiftTask, augment,
    generate_blob_task, generate_digit_task, inject_asymmetric_noise, inject_shift_noise,
    inject_symmetric_noise, read_dataset, write_dataset,
)
from .ensemble import ConfidenceHistory, EnsembleState, consensus_all, consensus_probs, ensemble_logits
from .errors import *  # noqa: F401,F403
from .labels import (
    PseudoLabelSet, compute_gamma, infer_pseudo_labels_aggregated, infer_pseudo_labels_late_fusion,
    read_label_csv, reassign, sample_disjoint_residual_labels, select_hcs, write_label_csv,
)
from .losses import LossResult, nel_loss, nl_loss, pl_loss
from .model import AdamState, ClassifierModel, adam_step, backward, forward, load_checkpoint, save_checkpoint
from .numerics import RngStream, softmax, stream_for
from .pipeline import (
    DESK_PRESET, RunConfig, ablate, desk_config, pretrain_source, refine, run_all, train_target,
    with_seed,
)

__version__ = "0.1.0"
