"""Command-line front end.

Subcommands: ``gen-data``, ``train``, ``eval``, ``ensemble train``,
``ensemble eval``.  A run is driven by one JSON config file; flags only
override the seed and paths.  Reports are written as text/csv with
matplotlib figures rendered alongside.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_run_config
from .constants import EXPRESSIONS, NUM_CLASSES
from .data import generate_synthetic_dataset, load_manifest, split_train_val
from .errors import FermtlError
from .figures import save_confusion_matrix, save_f1_bars, save_training_curves
from .losses import confusion_matrix, macro_f1
from .model import load_checkpoint, save_checkpoint
from .training import (
    TrainedMember,
    ensemble_predictions,
    train_ensemble,
    train_single,
)


def _write_predictions_csv(path, paths, classes, probs):
    with open(path, "w", newline="") as f:
        f.write("path,pred_class," + ",".join(f"p{i}" for i in range(NUM_CLASSES)) + "\n")
        for p, c, row in zip(paths, classes, probs):
            f.write(f"{p},{int(c)}," + ",".join(f"{v:.9f}" for v in row) + "\n")


def _check_artifacts(paths):
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise FermtlError("missing output artifacts: " + ", ".join(missing))


def _load_splits(run):
    manifest = load_manifest(run.data_dir)
    return split_train_val(manifest, run.val_fraction, run.split_seed())


def cmd_gen_data(args) -> int:
    manifest = generate_synthetic_dataset(args.n, args.seed, args.out)
    counts = manifest.class_counts()
    print(f"wrote {len(manifest)} samples to {args.out}")
    print("per class: " + ", ".join(f"{name}={counts[i]}" for i, name in enumerate(EXPRESSIONS)))
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_manifest, val_manifest = _load_splits(run)
    train_set = train_manifest.load()
    val_set = val_manifest.load()

    cfg = run.train_config()
    member, log = train_single(train_set, val_set, cfg)
    print(f"trained {cfg.backbone.variant} model: {member.model.parameter_count} parameters")

    ckpt = out / "checkpoint.mtl"
    save_checkpoint(member.model, ckpt)
    log.write_csv(out / "training_log.csv")
    report = _single_model_report(member, val_set)
    (out / "metrics.txt").write_text(report.to_text())
    save_training_curves(log, out / "training_curves.png")
    _check_artifacts([ckpt, out / "training_log.csv", out / "metrics.txt", out / "training_curves.png"])
    print(f"final validation macro F1: {report.macro_f1:.4f}")
    return 0


def _single_model_report(member, val_set):
    from .training import predict_classes

    preds = predict_classes(member.model, val_set)
    return macro_f1(confusion_matrix(val_set.labels, preds))


def cmd_eval(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
    out = Path(run.out_dir)
    ckpt = out / "checkpoint.mtl"
    if not ckpt.is_file():
        raise FermtlError(f"no checkpoint at {ckpt}; run `train` first")
    model = load_checkpoint(ckpt)
    _, val_manifest = _load_splits(run)
    val_set = val_manifest.load()
    member = TrainedMember(model=model, config=None, bag=None, final_metrics={})
    return _write_eval_outputs([member], val_set, out, prefix="eval")


def _write_eval_outputs(members, val_set, out: Path, prefix: str) -> int:
    probs, classes = ensemble_predictions(members, val_set)
    cm = confusion_matrix(val_set.labels, classes)
    report = macro_f1(cm)
    metrics_path = out / f"{prefix}_metrics.txt"
    pred_path = out / f"{prefix}_predictions.csv"
    metrics_path.write_text(report.to_text())
    _write_predictions_csv(pred_path, val_set.paths, classes, probs)
    save_confusion_matrix(cm, out / f"{prefix}_confusion.png")
    save_f1_bars(report, out / f"{prefix}_f1.png")
    _check_artifacts([metrics_path, pred_path, out / f"{prefix}_confusion.png", out / f"{prefix}_f1.png"])
    print(report.to_text(), end="")
    return 0


def cmd_ensemble_train(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
    out = Path(run.out_dir)
    members_dir = out / "members"
    members_dir.mkdir(parents=True, exist_ok=True)
    train_manifest, val_manifest = _load_splits(run)
    train_set = train_manifest.load()
    val_set = val_manifest.load()

    ecfg = run.ensemble_config()
    results = train_ensemble(train_set, val_set, ecfg)

    descriptor = {
        "subsample_fraction": ecfg.subsample_fraction,
        "seed": run.seed,
        "members": [],
    }
    artifacts = []
    for i, (member, log) in enumerate(results):
        ckpt_rel = f"members/member_{i:02d}.mtl"
        save_checkpoint(member.model, out / ckpt_rel)
        log_rel = f"members/member_{i:02d}_log.csv"
        log.write_csv(out / log_rel)
        descriptor["members"].append(
            {
                "checkpoint": ckpt_rel,
                "variant": member.config.backbone.variant,
                "train_seed": member.config.seed,
                "bag_size": int(len(member.bag)),
                "bag_sha": _bag_digest(member.bag),
            }
        )
        artifacts += [out / ckpt_rel, out / log_rel]
        print(
            f"member {i}: variant={member.config.backbone.variant} "
            f"bag={len(member.bag)} val_macro_f1={member.final_metrics['val_macro_f1']:.4f}"
        )
    desc_path = out / "ensemble.json"
    desc_path.write_text(json.dumps(descriptor, indent=2, sort_keys=True) + "\n")
    _save_member_curves([log for _, log in results], out / "members_curves.png")
    _check_artifacts(artifacts + [desc_path, out / "members_curves.png"])
    return 0


def _bag_digest(bag) -> str:
    import hashlib

    return hashlib.sha256(np.asarray(bag, dtype=np.int64).tobytes()).hexdigest()[:16]


def _save_member_curves(logs, path):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    for i, log in enumerate(logs):
        ax.plot([r.epoch for r in log.rows], [r.val_macro_f1 for r in log.rows], label=f"member {i}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation macro F1")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_ensemble_eval(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
    out = Path(run.out_dir)
    desc_path = out / "ensemble.json"
    if not desc_path.is_file():
        raise FermtlError(f"no ensemble descriptor at {desc_path}; run `ensemble train` first")
    descriptor = json.loads(desc_path.read_text())
    missing = [m["checkpoint"] for m in descriptor["members"] if not (out / m["checkpoint"]).is_file()]
    if missing:
        raise FermtlError("missing member checkpoints: " + ", ".join(missing))
    members = [
        TrainedMember(model=load_checkpoint(out / m["checkpoint"]), config=None, bag=None, final_metrics={})
        for m in descriptor["members"]
    ]
    _, val_manifest = _load_splits(run)
    val_set = val_manifest.load()
    return _write_eval_outputs(members, val_set, out, prefix="ensemble")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermtl",
        description="Multi-task facial expression recognition at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="sample count (divisible by 6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    for name, func, help_text in (
        ("train", cmd_train, "train a single model"),
        ("eval", cmd_eval, "evaluate a trained checkpoint on the validation split"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("ensemble", help="bagged ensemble commands")
    esub = p.add_subparsers(dest="ensemble_command", required=True)
    for name, func in (("train", cmd_ensemble_train), ("eval", cmd_ensemble_eval)):
        ep = esub.add_parser(name)
        ep.add_argument("--config", required=True)
        ep.add_argument("--seed", type=int, default=None)
        ep.add_argument("--out", default=None)
        ep.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FermtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
