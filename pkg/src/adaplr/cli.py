"""Command-line front end: ``adaplr <subcommand> [flags]``.

Every RunConfig field is a flag (``--n-members 3``, ``--alpha 0.9``, ...).
``--config path.json`` loads a config first; explicit flags override it, and
``--preset desk`` applies the desk-scale learning rates before both.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import pipeline as pl
from .data import DigitTask, ShiftTask, generate_blob_task, generate_digit_task, read_dataset, write_dataset
from .errors import AdaplrError, ConfigError
from .labels import (
    infer_pseudo_labels_aggregated, infer_pseudo_labels_late_fusion, read_label_csv,
    select_hcs, write_label_csv,
)
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("adaplr")

# RunConfig fields that are not plain scalars get JSON-typed flags
_JSON_FIELDS = {"task", "augmentation"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run config (defaults as in RunConfig)")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    g.add_argument("--preset", choices=["desk"], help="apply the desk-scale training preset")
    for f in fields(pl.RunConfig):
        flag = _flag(f.name)
        if f.name in _JSON_FIELDS:
            g.add_argument(flag, type=json.loads, default=None, metavar="JSON")
        elif f.name == "hidden":
            g.add_argument(flag, type=int, nargs="+", default=None)
        elif f.name == "reassignment":
            g.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "n_rl":
            g.add_argument(flag, type=int, default=None)
        elif f.name in ("source_path", "target_path", "generator", "residual_mode", "augment_mode"):
            g.add_argument(flag, default=None)
        else:
            default = f.default if f.default is not MISSING else None
            g.add_argument(flag, type=type(default), default=None)


def config_from_args(args: argparse.Namespace) -> pl.RunConfig:
    base = {}
    if args.preset == "desk":
        base.update(pl.DESK_PRESET)
    if args.config:
        try:
            base.update(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for f in fields(pl.RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    if isinstance(base.get("task"), dict) and base.get("generator", "blobs") == "blobs":
        # a partial task overrides the default task field by field
        base["task"] = {**pl.RunConfig().task, **base["task"]}
    cfg = pl.RunConfig.from_dict(base)
    if "seed" in base and "task" not in base:
        cfg = pl.with_seed(cfg, cfg.seed)
    return cfg


def _write_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, default=float) + "\n"
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.generator == "blobs":
        src, tgt = generate_blob_task(ShiftTask.from_dict(cfg.task))
    elif cfg.generator == "digits":
        src, tgt = generate_digit_task(DigitTask(**cfg.task))
    else:
        raise ConfigError("gen-data needs generator blobs or digits")
    write_dataset(src, out / "source.csv")
    write_dataset(tgt, out / "target.csv")
    _write_json({"source": str(out / "source.csv"), "target": str(out / "target.csv"),
                 "n_source": len(src), "n_target": len(tgt), "num_classes": src.num_classes}, None)
    return 0


def cmd_pretrain(args, cfg):
    cfg.validate()
    source = read_dataset(args.source) if args.source else pl.load_task(cfg)[0]
    res = pl.pretrain_source(cfg, source)
    save_checkpoint(res.model, args.out)
    _write_json({"checkpoint": args.out, "train_acc": res.train_acc,
                 "holdout_acc": res.holdout_acc}, None)
    return 0


def _target(args, cfg):
    return read_dataset(args.target) if args.target else pl.load_task(cfg)[1]


def cmd_infer(args, cfg):
    target = _target(args, cfg)
    models = [load_checkpoint(p, num_classes=target.num_classes, input_dim=target.dim)
              for p in args.model]
    if len(models) == 1:
        labels = infer_pseudo_labels_aggregated(models[0], target.features, target.num_classes,
                                                true_labels=target.labels)
    else:
        labels = infer_pseudo_labels_late_fusion(models, target.features, true_labels=target.labels)
    write_label_csv(labels, args.out)
    _write_json({"labels": args.out, "n": len(labels), "noise_pct": pl._pct(labels.noise_rate())}, None)
    return 0


def cmd_refine(args, cfg):
    cfg.validate()
    target = _target(args, cfg)
    model = load_checkpoint(args.model, num_classes=target.num_classes, input_dim=target.dim)
    initial = None
    if args.labels:
        initial = read_label_csv(args.labels, target.num_classes)
        initial.true_labels = None
    res = pl.refine(cfg, model, target, initial)
    write_label_csv(res.labels, args.out)
    if args.metrics:
        Path(args.metrics).write_text(pl.metrics_csv(res.metrics))
    _write_json({"labels": args.out, "epochs_run": res.epochs_run, "stall_fired": res.stall_fired,
                 "final_noise_pct": pl._pct(res.labels.noise_rate()),
                 "hcs_count": int(select_hcs(res.labels, cfg.alpha).size)}, None)
    return 0


def cmd_train_target(args, cfg):
    cfg.validate()
    target = _target(args, cfg)
    model = load_checkpoint(args.model, num_classes=target.num_classes, input_dim=target.dim)
    refined = read_label_csv(args.labels, target.num_classes)
    hcs = select_hcs(refined, cfg.alpha)
    res = pl.train_target(cfg, refined, target, hcs, model)
    save_checkpoint(res.model, args.out)
    _write_json({"checkpoint": args.out, "n_train": res.n_train,
                 "target_acc": pl._pct(res.accuracy)}, None)
    return 0


def cmd_run_all(args, cfg):
    res = pl.run_all(cfg, out_dir=args.out, strip_truth=args.strip_truth)
    _write_json({k: res[k] for k in pl.SUMMARY_KEYS}, None)
    return 0


def cmd_ablate(args, cfg):
    seeds = [int(s) for s in args.seeds.split(",")]
    values = args.values.split(",")
    rows = pl.ablate(cfg, args.axis, values, seeds, out_csv=args.out,
                     on_cell=lambda r: log.info("%s=%s seed=%s %s", r["axis"], r["value"],
                                                r["seed"], r["status"]))
    _write_json({"cells": len(rows), "failed": sum(r["status"] != "ok" for r in rows),
                 "mean_final_noise_pct": pl.summarize_ablation(rows)}, None)
    return 0


def cmd_eval(args, cfg):
    data = read_dataset(args.data)
    model = load_checkpoint(args.model, num_classes=data.num_classes, input_dim=data.dim)
    pred = np.argmax(model.predict_logits(data.features), axis=1)
    out = {"n": len(data), "num_classes": data.num_classes}
    if data.labels is not None:
        out["accuracy_pct"] = 100.0 * float(np.mean(pred == data.labels))
    if args.labels:
        ref = read_label_csv(args.labels, data.num_classes)
        out["pseudo_label_agreement_pct"] = 100.0 * float(np.mean(pred == ref.labels))
    _write_json(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaplr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        _add_config_flags(p)
        return p

    p = add("gen-data", cmd_gen_data, "write a synthetic source/target pair as CSV + JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = add("pretrain", cmd_pretrain, "train the source model")
    p.add_argument("--source", help="source dataset CSV (default: generate from config)")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = add("infer", cmd_infer, "pseudo-label the target with one or more source models")
    p.add_argument("--model", required=True, nargs="+", help="checkpoint(s); several = late fusion")
    p.add_argument("--target", help="target dataset CSV")
    p.add_argument("--out", required=True, help="pseudo-label CSV")

    p = add("refine", cmd_refine, "refine pseudo-labels by negative ensemble learning")
    p.add_argument("--model", required=True, help="source checkpoint")
    p.add_argument("--target", help="target dataset CSV")
    p.add_argument("--labels", help="initial pseudo-label CSV (default: infer)")
    p.add_argument("--out", required=True, help="refined pseudo-label CSV")
    p.add_argument("--metrics", help="per-epoch metrics CSV")

    p = add("train-target", cmd_train_target, "train the final model on high-confidence samples")
    p.add_argument("--model", required=True, help="source checkpoint")
    p.add_argument("--target", help="target dataset CSV")
    p.add_argument("--labels", required=True, help="refined pseudo-label CSV")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = add("run-all", cmd_run_all, "pretrain, infer, refine and train the target model")
    p.add_argument("--out", help="artefact directory")
    p.add_argument("--strip-truth", action="store_true", help="drop target labels before running")

    p = add("ablate", cmd_ablate, "sweep one axis over several seeds")
    p.add_argument("--axis", required=True, choices=sorted(pl.AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--out", help="ablation CSV")

    p = add("eval", cmd_eval, "accuracy of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--labels", help="pseudo-label CSV to compare against")
    p.add_argument("--out", help="also write the report here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return args.func(args, cfg)
    except (AdaplrError, ValueError, OSError) as exc:
        code = pl.exit_code_for(exc)
        if isinstance(exc, (OSError, ValueError)) and not isinstance(exc, AdaplrError):
            code = 1
        print(f"adaplr {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
