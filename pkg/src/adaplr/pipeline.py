"""Source pretraining, pseudo-label refinement with negative ensemble learning,
final target training, and the run / ablation drivers that tie them together."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import (
    AugmentationSpec, DigitTask, LabeledDataset, ShiftTask, augment, default_augmentation,
    generate_blob_task, generate_digit_task, read_dataset,
)
from .ensemble import ConfidenceHistory, EnsembleState, Member, consensus_all, record_epoch_snapshot
from .errors import AdaplrError, ArgumentError, ConfigError, EmptyHCSError, NumericError, TrainingError
from .labels import (
    PseudoLabelSet, check_residual_config, compute_gamma, default_n_rl,
    infer_pseudo_labels_aggregated, reassign, sample_disjoint_residual_batch, select_hcs,
)
from .losses import nel_loss, pl_loss
from .model import AdamState, ClassifierModel, adam_step, backward, forward, save_checkpoint
from .numerics import (
    PURPOSE_AUGMENT, PURPOSE_INIT, PURPOSE_RESIDUAL, PURPOSE_SHUFFLE, stream_for,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "noise_pct", "gamma", "hcs_count", "reassigned_count",
                  "mean_conf_clean", "mean_conf_noisy", "mean_nel_loss"]
SUMMARY_KEYS = ["seed", "task", "initial_noise_pct", "final_noise_pct", "pseudo_label_acc_initial",
                "pseudo_label_acc_refined", "target_acc", "epochs_refine_run", "stall_fired"]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_EMPTY_HCS = 0, 2, 3, 4

# stream index offsets so each stage/member draws from its own stream
_SOURCE, _TARGET, _MEMBER = 0, 1, 100


@dataclass
class RunConfig:
    seed: int = 0
    task: dict = field(default_factory=lambda: ShiftTask(rotation_deg=50.0).to_dict())
    generator: str = "blobs"                 # blobs | digits | files
    source_path: Optional[str] = None
    target_path: Optional[str] = None
    n_members: int = 3
    n_rl: Optional[int] = None               # default floor((C-1)/N_e)
    history_size: int = 10
    alpha: float = 0.9
    batch_size: int = 32
    lr_head: float = 1e-4
    lr_feature: float = 1e-5
    weight_decay: float = 5e-4
    lr_source: float = 1e-3
    hidden: tuple = (64, 64)
    head_init_scale: float = 0.01
    epochs_source: int = 20
    epochs_refine: int = 60
    epochs_target: int = 20
    stall_window: int = 10
    stall_fraction: float = 0.001
    residual_mode: str = "DRL"               # DRL | SRL
    augment_mode: str = "DAUG"               # DAUG | SAUG
    augmentation: Optional[list] = None      # transform dicts; None = layout default
    reassignment: bool = True
    holdout_fraction: float = 0.2
    n_threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def num_classes(self) -> int:
        if self.generator == "digits":
            return 10
        if self.generator == "files":
            return int(self.task.get("num_classes", 0)) or _peek_num_classes(self.target_path)
        return int(self.task.get("num_classes", ShiftTask.num_classes))

    def residual_size(self) -> int:
        return self.n_rl if self.n_rl is not None else default_n_rl(self.num_classes(), self.n_members)

    def validate(self) -> "RunConfig":
        if self.generator not in ("blobs", "digits", "files"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.generator == "files" and not (self.source_path and self.target_path):
            raise ConfigError("file tasks need source_path and target_path")
        for name in ("epochs_source", "epochs_refine", "epochs_target", "batch_size",
                     "history_size", "n_members", "stall_window", "n_threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.residual_mode not in ("DRL", "SRL") or self.augment_mode not in ("DAUG", "SAUG"):
            raise ConfigError("diversity mode must be DRL/SRL x DAUG/SAUG")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        for name in ("lr_head", "lr_feature", "lr_source"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        c = self.num_classes()
        if c < 2:
            raise ConfigError("need at least two classes")
        # SRL feeds every member the same block, so only one block must fit
        members_needing_disjoint = self.n_members if self.residual_mode == "DRL" else 1
        check_residual_config(c, members_needing_disjoint, self.residual_size())
        if self.augmentation is not None:
            try:
                AugmentationSpec.from_list(self.augmentation)
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad augmentation entry: {exc}") from exc
        return self


# Desk-scale training budget for the synthetic tasks. The RunConfig defaults
# keep the reference learning rates, which need far more epochs than a
# two-thousand-sample blob task affords.
DESK_PRESET = {"lr_head": 1e-3, "lr_feature": 1e-4, "epochs_refine": 80}


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Copy of ``config`` whose run seed and generator seed are both ``seed``."""
    task = dict(config.task)
    if config.generator in ("blobs", "digits"):
        task["seed"] = int(seed)
    return replace(config, seed=int(seed), task=task)


def desk_config(seed: int = 0, **overrides) -> RunConfig:
    """Blob-task config with the desk preset applied; ``overrides`` win."""
    return with_seed(RunConfig.from_dict({**DESK_PRESET, **overrides}), seed)


def _peek_num_classes(path) -> int:
    try:
        return int(json.loads(Path(path).with_suffix(".json").read_text())["num_classes"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot determine C from {path}: {exc}") from exc


def load_task(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    if config.generator == "blobs":
        return generate_blob_task(ShiftTask.from_dict(config.task))
    if config.generator == "digits":
        return generate_digit_task(DigitTask(**config.task))
    return read_dataset(config.source_path), read_dataset(config.target_path)


def task_name(config: RunConfig) -> str:
    if config.generator == "files":
        return f"files:{Path(config.target_path).stem}"
    if config.generator == "digits":
        return "digits"
    t = ShiftTask.from_dict(config.task)
    return f"blobs-C{t.num_classes}-D{t.dim}-rot{t.rotation_deg:g}"


@dataclass
class MetricsRecord:
    epoch: int
    noise_pct: Optional[float]
    gamma: float
    hcs_count: int
    reassigned_count: int
    mean_conf_clean: Optional[float]
    mean_conf_noisy: Optional[float]
    mean_nel_loss: float

    def row(self) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, k)) for k in METRICS_HEADER]


def metrics_csv(records: Sequence[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield order[start:start + size]


def _finite_or_raise(value: float, stage: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"{stage}: non-finite loss")


def _step(model: ClassifierModel, opt: AdamState, x, loss_fn, target, stage: str) -> float:
    logits, cache = forward(model, x)
    res = loss_fn(logits, target)
    _finite_or_raise(res.value, stage)
    try:
        adam_step(opt, model, backward(model, cache, res.grad_logits))
    except NumericError as exc:
        raise TrainingError(f"{stage}: {exc}") from exc
    return res.value


def accuracy(model: ClassifierModel, features, labels) -> float:
    return float(np.mean(np.argmax(model.predict_logits(features), axis=1) == labels))


def train_supervised(model: ClassifierModel, opt: AdamState, features, labels, epochs: int,
                     batch_size: int, seed: int, stream_index: int, stage: str) -> ClassifierModel:
    """Plain positive-learning (cross-entropy) training with Adam."""
    shuffle = stream_for(seed, PURPOSE_SHUFFLE, stream_index)
    n = len(features)
    for _ in range(epochs):
        for idx in _batches(n, batch_size, shuffle.permutation(n)):
            _step(model, opt, features[idx], pl_loss, labels[idx], stage)
    return model


# ------------------------------------------------------------------- stages

@dataclass
class SourceResult:
    model: ClassifierModel
    train_acc: float
    holdout_acc: Optional[float]


def pretrain_source(config: RunConfig, source: LabeledDataset) -> SourceResult:
    """Train the source classifier with cross entropy on labelled source data."""
    config.validate()
    if source.labels is None:
        raise ArgumentError("source data must be labelled")
    split = stream_for(config.seed, PURPOSE_SHUFFLE, 900).permutation(len(source))
    n_hold = int(round(config.holdout_fraction * len(source)))
    hold, train = split[:n_hold], split[n_hold:]
    model = ClassifierModel.create(source.dim, config.hidden, source.num_classes,
                                   stream_for(config.seed, PURPOSE_INIT, _SOURCE))
    opt = AdamState.for_model(model, lr_head=config.lr_source, lr_feature=config.lr_source,
                              weight_decay=config.weight_decay)
    x, y = source.features, source.labels
    train_supervised(model, opt, x[train], y[train], config.epochs_source, config.batch_size,
                     config.seed, _SOURCE, "pretrain")
    train_acc = accuracy(model, x[train], y[train])
    hold_acc = accuracy(model, x[hold], y[hold]) if n_hold else None
    log.info("source model: train acc %.4f, holdout acc %s", train_acc, hold_acc)
    return SourceResult(model, train_acc, hold_acc)


@dataclass
class RefineResult:
    labels: PseudoLabelSet
    metrics: list
    gamma_trace: list            # (gamma, confidences) per epoch; entry 0 is the untrained ensemble
    epochs_run: int
    stall_fired: bool
    ensemble: EnsembleState


def build_ensemble(config: RunConfig, source_model: ClassifierModel) -> EnsembleState:
    """Members copy the source feature layers and get fresh heads from their own stream."""
    members = []
    for k in range(config.n_members):
        model = source_model.with_new_head(stream_for(config.seed, PURPOSE_INIT, _MEMBER + k),
                                           config.head_init_scale)
        opt = AdamState.for_model(model, lr_head=config.lr_head, lr_feature=config.lr_feature,
                                  weight_decay=config.weight_decay)
        members.append(Member(model, opt, stream_for(config.seed, PURPOSE_AUGMENT, k)))
    return EnsembleState(members)


def _augmentation_specs(config: RunConfig, layout) -> list:
    if config.augmentation is None:
        spec = default_augmentation(layout)
    else:
        spec = AugmentationSpec.from_list(config.augmentation, layout)
    return [spec] * config.n_members


def refine(config: RunConfig, source_model: ClassifierModel, target: LabeledDataset,
           initial: Optional[PseudoLabelSet] = None,
           on_epoch: Optional[Callable[[MetricsRecord], None]] = None) -> RefineResult:
    """Negative-ensemble-learning refinement of the target pseudo-labels.

    ``target.labels`` (hidden truth), when present, feeds metrics only: the
    training loop sees features and the current pseudo-labels, nothing else.
    """
    config.validate()
    x = target.features
    n, c = x.shape[0], target.num_classes
    if n == 0:
        raise ArgumentError("empty target set")
    truth = None if target.labels is None else target.labels.copy()
    if initial is None:
        initial = infer_pseudo_labels_aggregated(source_model, x, c)
    current = initial.training_view()

    ens = build_ensemble(config, source_model)
    specs = _augmentation_specs(config, target.layout)
    n_rl = config.residual_size()
    rl_stream = stream_for(config.seed, PURPOSE_RESIDUAL)
    shuffle = stream_for(config.seed, PURPOSE_SHUFFLE, 1000)
    shared_aug = stream_for(config.seed, PURPOSE_AUGMENT, 999)
    history = ConfidenceHistory(n, c, config.n_members, config.history_size)
    pool = ThreadPoolExecutor(config.n_threads) if config.n_threads > 1 else None

    def member_step(k, xb, rl_k):
        m = ens.members[k]
        xk = xb if config.augment_mode == "SAUG" else augment(xb, specs[k], m.stream)
        return _step(m.model, m.optimizer, xk, nel_loss, rl_k, "refine")

    # epoch 0: consensus of the untrained ensemble, measured without entering the history
    probe = ConfidenceHistory(n, c, config.n_members, 1)
    record_epoch_snapshot(probe, ens, x)
    conf0 = consensus_all(probe)[np.arange(n), current.labels]
    metrics, trace = [], [(compute_gamma(conf0, config.alpha), conf0)]
    started, quiet, stall = False, 0, False
    epoch = 0
    try:
        for epoch in range(1, config.epochs_refine + 1):
            losses = []
            for idx in _batches(n, config.batch_size, shuffle.permutation(n)):
                rl = sample_disjoint_residual_batch(
                    rl_stream, current.labels[idx], c,
                    config.n_members if config.residual_mode == "DRL" else 1, n_rl)
                if config.residual_mode == "SRL":
                    rl = np.repeat(rl, config.n_members, axis=1)
                xb = x[idx]
                if config.augment_mode == "SAUG":
                    xb = augment(xb, specs[0], shared_aug)
                jobs = [(k, xb, rl[:, k]) for k in range(config.n_members)]
                if pool is None:
                    losses += [member_step(*j) for j in jobs]
                else:
                    losses += list(pool.map(lambda j: member_step(*j), jobs))

            record_epoch_snapshot(history, ens, x)
            probs = consensus_all(history)
            conf = probs[np.arange(n), current.labels]
            gamma = compute_gamma(conf, config.alpha)
            trace.append((gamma, conf))
            current = replace(current, confidences=conf)
            moved = 0
            if config.reassignment:
                current, moved = reassign(current, history, gamma)
            else:
                current = replace(current, epoch=current.epoch + 1)

            rec = _epoch_metrics(epoch, current, truth, gamma, conf, config.alpha, moved,
                                 float(np.mean(losses)))
            metrics.append(rec)
            if on_epoch:
                on_epoch(rec)
            log.debug("epoch %d: gamma=%.4f moved=%d noise=%s", epoch, gamma, moved, rec.noise_pct)

            if moved:
                started = True
            if started and config.reassignment:
                quiet = quiet + 1 if moved < config.stall_fraction * n else 0
                if quiet >= config.stall_window:
                    stall = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    if truth is not None:
        current.true_labels = truth
    return RefineResult(current, metrics, trace, epoch, stall, ens)


def _epoch_metrics(epoch, labels: PseudoLabelSet, truth, gamma, gamma_conf, alpha, moved,
                   mean_loss) -> MetricsRecord:
    hcs = int(np.count_nonzero(gamma_conf > alpha))
    noise = clean_c = noisy_c = None
    if truth is not None:
        wrong = labels.labels != truth
        noise = 100.0 * float(np.mean(wrong))
        if np.any(~wrong):
            clean_c = float(np.mean(labels.confidences[~wrong]))
        if np.any(wrong):
            noisy_c = float(np.mean(labels.confidences[wrong]))
    return MetricsRecord(epoch, noise, float(gamma), hcs, int(moved), clean_c, noisy_c, mean_loss)


@dataclass
class TargetResult:
    model: ClassifierModel
    accuracy: Optional[float]
    n_train: int


def train_target(config: RunConfig, refined: PseudoLabelSet, target: LabeledDataset,
                 hcs: np.ndarray, source_model: ClassifierModel) -> TargetResult:
    """Single final model trained with cross entropy on the high-confidence samples only."""
    config.validate()
    hcs = np.asarray(hcs, dtype=np.int64)
    if hcs.size == 0:
        raise EmptyHCSError(f"no sample has confidence above alpha={config.alpha}")
    model = source_model.with_new_head(stream_for(config.seed, PURPOSE_INIT, _TARGET),
                                           config.head_init_scale)
    opt = AdamState.for_model(model, lr_head=config.lr_head, lr_feature=config.lr_feature,
                              weight_decay=config.weight_decay)
    train_supervised(model, opt, target.features[hcs], refined.labels[hcs], config.epochs_target,
                     config.batch_size, config.seed, _TARGET, "train-target")
    acc = None if target.labels is None else accuracy(model, target.features, target.labels)
    return TargetResult(model, acc, int(hcs.size))


# ------------------------------------------------------------------ drivers

class StageError(AdaplrError):
    """Wraps an error raised inside a named stage of ``run_all``."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error


def exit_code_for(exc: BaseException) -> int:
    inner = exc.error if isinstance(exc, StageError) else exc
    if isinstance(inner, ConfigError):
        return EXIT_CONFIG
    if isinstance(inner, (TrainingError, NumericError)):
        return EXIT_DIVERGED
    if isinstance(inner, EmptyHCSError):
        return EXIT_EMPTY_HCS
    return 1


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except AdaplrError as exc:
        raise StageError(name, exc) from exc


def _pct(v):
    return None if v is None else 100.0 * v


def run_all(config: RunConfig, out_dir=None, strip_truth: bool = False) -> dict:
    """Pretrain, infer, refine, train the target model; optionally write artefacts.

    Returns the summary dict (exact key set) plus ``wall_time``, the metric
    records, the refined labels and the full ``RefineResult``, and, when
    ``out_dir`` is given, the artefact ``paths``. ``strip_truth`` drops the
    target ground truth before any stage runs.
    """
    t0 = time.perf_counter()
    _stage("config", config.validate)
    source, target = _stage("data", load_task, config)
    truth = target.labels
    if strip_truth:
        target = target.without_labels()
    src = _stage("pretrain", pretrain_source, config, source)
    initial = _stage("infer", infer_pseudo_labels_aggregated, src.model, target.features,
                     target.num_classes, true_labels=target.labels)
    ref = _stage("refine", refine, config, src.model, target, initial)
    hcs = select_hcs(ref.labels, config.alpha)
    tgt = _stage("train-target", train_target, config, ref.labels, target, hcs, src.model)

    init_acc, ref_acc = initial.accuracy(), ref.labels.accuracy()
    summary = {
        "seed": config.seed,
        "task": task_name(config),
        "initial_noise_pct": _pct(initial.noise_rate()),
        "final_noise_pct": _pct(ref.labels.noise_rate()),
        "pseudo_label_acc_initial": _pct(init_acc),
        "pseudo_label_acc_refined": _pct(ref_acc),
        "target_acc": _pct(tgt.accuracy),
        "epochs_refine_run": ref.epochs_run,
        "stall_fired": ref.stall_fired,
    }
    result = dict(summary)
    result["wall_time"] = time.perf_counter() - t0
    result["metrics"] = ref.metrics
    result["refined"] = ref.labels
    result["refine_result"] = ref
    result["hcs_size"] = int(hcs.size)
    result["source_holdout_acc"] = src.holdout_acc
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .labels import write_label_csv
        (out / "metrics.csv").write_text(metrics_csv(ref.metrics))
        write_label_csv(ref.labels, out / "refined_labels.csv")
        save_checkpoint(src.model, out / "source.ckpt")
        save_checkpoint(tgt.model, out / "target.ckpt")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        result["paths"] = {k: str(out / v) for k, v in [
            ("metrics", "metrics.csv"), ("labels", "refined_labels.csv"),
            ("source", "source.ckpt"), ("target", "target.ckpt"), ("summary", "summary.json")]}
    del truth
    return result


AXES = {
    "alpha": "alpha",
    "n_rl": "n_rl",
    "n_e": "n_members",
    "diversity": None,       # values like "DRL+DAUG"
}


def _apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    if axis == "diversity":
        rl, aug = str(value).split("+")
        return replace(config, residual_mode=rl, augment_mode=aug)
    if axis == "n_e":
        # keep the residual size fixed across cells when one was given
        return replace(config, n_members=int(value))
    cast = float if axis == "alpha" else int
    return replace(config, **{AXES[axis]: cast(value)})


ABLATION_HEADER = ["axis", "value", "status", "error"] + SUMMARY_KEYS


def ablate(config: RunConfig, axis: str, values: Sequence, seeds: Sequence[int],
           out_csv=None, on_cell: Optional[Callable[[dict], None]] = None) -> list:
    """Run ``run_all`` for every (value, seed) cell; failed cells are recorded, not raised."""
    rows = []
    for value in values:
        for seed in seeds:
            row = {"axis": axis, "value": value, "status": "ok", "error": ""}
            try:
                cell = _apply_axis(with_seed(config, seed), axis, value)
                res = run_all(cell)
                row.update({k: res[k] for k in SUMMARY_KEYS})
            except (AdaplrError, ValueError) as exc:
                row.update({k: None for k in SUMMARY_KEYS})
                row.update(seed=int(seed), status="failed", error=str(exc))
            rows.append(row)
            if on_cell:
                on_cell(row)
    if out_csv is not None:
        with Path(out_csv).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ABLATION_HEADER, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in ABLATION_HEADER})
    return rows


def summarize_ablation(rows: Sequence[dict], key: str = "final_noise_pct") -> dict:
    """Seed-mean of ``key`` per axis value over successful cells."""
    out = {}
    for r in rows:
        if r["status"] == "ok" and r[key] is not None:
            out.setdefault(r["value"], []).append(r[key])
    return {v: float(np.mean(xs)) for v, xs in out.items()}
