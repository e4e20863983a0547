"""Command-line entry point: synth-data, split, train, generate, evaluate,
and report subcommands covering the full pipeline.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
Errors print one machine-parsable line: ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .data import (
    check_no_leakage,
    load_manifest,
    load_split,
    save_split,
    split_by_subject,
    subset,
)
from .evaluation import (
    evaluate_testset,
    label_recovery_accuracy,
    load_region_masks,
)
from .phantom import PhantomSpec, generate_dataset, load_labels, write_dataset
from .training import (
    TrainConfig,
    TrainingDiverged,
    config_from_dict,
    config_hash,
    config_to_dict,
    generate_pet,
    load_checkpoint,
    train,
)
from .volume import read_volume, write_xvol

_EXIT_CODES = {"usage": 2, "data": 3, "numeric": 4}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category
        self.code = _EXIT_CODES[category]


def _echo_config(name: str, payload: dict) -> None:
    print(f"{name} config: {json.dumps(payload, sort_keys=True, default=str)}")


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise CliError("usage", f"shape must be N or D,H,W, got {text!r}")
    return tuple(parts)


def cmd_synth_data(args) -> int:
    try:
        spec = PhantomSpec(
            shape=_parse_shape(args.shape),
            n_subjects=args.subjects,
            images_per_subject=args.images_per_subject,
            abeta_range=(args.abeta_lo, args.abeta_hi),
            uptake_coupling=args.coupling,
            mri_noise=args.mri_noise,
            pet_noise=args.pet_noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError("usage", str(exc))
    _echo_config("synth-data", asdict(spec))
    samples, masks = generate_dataset(spec)
    manifest = write_dataset(samples, masks, args.out)
    print(f"wrote {len(samples)} pairs; manifest: {manifest}")
    return 0


def cmd_split(args) -> int:
    entries = load_manifest(args.manifest)
    sizes = (args.train, args.val, args.test)
    try:
        assignment = split_by_subject(entries, sizes, seed=args.seed)
    except ValueError as exc:
        raise CliError("data", str(exc))
    check_no_leakage(assignment)
    _echo_config("split", {"sizes": list(sizes), "seed": args.seed})
    out = save_split(assignment, args.out)
    counts = {name: 0 for name in ("train", "val", "test")}
    for e in entries:
        counts[assignment[e.subject_id]] += 1
    print(f"split written: {out} (images per split: {counts})")
    return 0


def _resolve_train_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise CliError("data", f"missing config file: {cfg_path}")
        base = json.loads(cfg_path.read_text())

    overrides = {
        "model": args.model,
        "conditioning": args.cond,
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "adversarial": args.adv,
        "lr_schedule": args.lr_schedule,
        "decay_start_epoch": args.decay_start,
        "dropout_p": args.dropout,
        "max_steps": args.steps,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if args.no_augment:
        base["augment_enabled"] = False

    weights = dict(base.get("weights") or {})
    for key, value in (
        ("lambda_l1", args.lambda_l1),
        ("lambda_cyc1", args.lambda_cyc1),
        ("lambda_cyc2", args.lambda_cyc2),
        ("lambda_idt", args.lambda_idt),
        ("lambda_cls", args.lambda_cls),
    ):
        if value is not None:
            weights[key] = value
    if weights:
        model = base.get("model", "cyclegan")
        from .training import default_weights

        full = asdict(default_weights(model))
        full.update(weights)
        base["weights"] = full

    try:
        return config_from_dict(base)
    except (ValueError, TypeError) as exc:
        raise CliError("usage", str(exc))


def cmd_train(args) -> int:
    config = _resolve_train_config(args)
    entries = load_manifest(args.manifest)
    if args.split:
        assignment = load_split(args.split)
        check_no_leakage(assignment)
        train_entries = subset(entries, assignment, "train")
        val_entries = subset(entries, assignment, "val")
    else:
        train_entries, val_entries = entries, []
    if not train_entries:
        raise CliError("data", "training split is empty")

    out_dir = Path(args.out) if args.out else (
        Path("runs") / f"run-{config_hash(config)}-{time.strftime('%Y%m%d-%H%M%S')}"
    )
    _echo_config("train", config_to_dict(config))
    result = train(config, train_entries, out_dir, val_entries=val_entries)
    print(f"final checkpoint: {result.final_checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint} (val ssim {result.best_val_ssim:.4f})")
    print(f"loss log: {result.loss_log}")
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    mri = read_volume(args.mri)
    _echo_config("generate", {"checkpoint": args.checkpoint, "abeta": args.abeta})
    try:
        fake = generate_pet(ckpt, mri, args.abeta)
    except ValueError as exc:
        raise CliError("data", str(exc))
    write_xvol(fake, args.out)
    print(f"wrote {args.out}")
    return 0


def _test_entries(args):
    entries = load_manifest(args.manifest)
    if args.split:
        assignment = load_split(args.split)
        check_no_leakage(assignment)
        return subset(entries, assignment, args.subset)
    return entries


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    entries = _test_entries(args)
    if not entries:
        raise CliError("data", f"no entries in subset {args.subset!r}")
    masks = load_region_masks(args.target_mask, args.cerebellum_mask)
    _echo_config(
        "evaluate",
        {"checkpoint": args.checkpoint, "n_images": len(entries), "subset": args.subset},
    )
    report = evaluate_testset(ckpt, entries, masks, threshold=args.threshold)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "report.csv")
    summary = report.summary()

    labels_path = Path(args.labels) if args.labels else Path(args.manifest).parent / "labels.csv"
    if labels_path.exists():
        by_name = {Path(k).name: v for k, v in load_labels(labels_path).items()}
        summary["label_recovery_accuracy"] = label_recovery_accuracy(report, by_name)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ckpt = load_checkpoint(args.checkpoint)
    entries = _test_entries(args)[: args.max_images]
    if not entries:
        raise CliError("data", f"no entries in subset {args.subset!r}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config("report", {"checkpoint": args.checkpoint, "n_images": len(entries)})

    from .data import load_sample

    for e in entries:
        s = load_sample(e)
        fake = generate_pet(ckpt, s.mri, s.abeta_ratio)
        vols = [("MRI input", s.mri), ("generated PET", fake), ("true PET", s.pet)]
        d, h, w_ = s.mri.shape
        views = [
            ("axial", lambda v: v.data[d // 2]),
            ("sagittal", lambda v: v.data[:, :, w_ // 2]),
            ("coronal", lambda v: v.data[:, h // 2]),
        ]
        fig, axes = plt.subplots(3, 3, figsize=(9, 9))
        for r, (view_name, slicer) in enumerate(views):
            for c, (col_name, vol) in enumerate(vols):
                ax = axes[r, c]
                ax.imshow(slicer(vol), cmap="gray")
                ax.axis("off")
                if r == 0:
                    ax.set_title(col_name, fontsize=10)
                if c == 0:
                    ax.text(-0.1, 0.5, view_name, transform=ax.transAxes,
                            rotation=90, va="center", fontsize=10)
        name = Path(e.pet_path).stem.replace("_pet", "")
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.png", dpi=100)
        plt.close(fig)

    if args.loss_log:
        _plot_loss_curves(Path(args.loss_log), out_dir / "loss_curves.png", plt)
    print(f"report images written to {out_dir}")
    return 0


def _plot_loss_curves(log_path: Path, out_path: Path, plt) -> None:
    import csv as _csv

    if not log_path.exists():
        raise CliError("data", f"missing loss log: {log_path}")
    series: dict[str, tuple[list, list]] = {}
    with open(log_path, newline="") as fh:
        for row in _csv.DictReader(fh):
            xs, ys = series.setdefault(row["term"], ([], []))
            xs.append(int(row["step"]))
            ys.append(float(row["value"]))
    fig, ax = plt.subplots(figsize=(8, 5))
    for term, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, label=term, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mri2pet",
        description="3D MRI-to-PET synthesis with plasma-biomarker conditioning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=40)
    p.add_argument("--images-per-subject", type=int, default=2)
    p.add_argument("--shape", default="64", help="N or D,H,W (divisible by 8)")
    p.add_argument("--abeta-lo", type=float, default=0.03)
    p.add_argument("--abeta-hi", type=float, default=0.09)
    p.add_argument("--coupling", type=float, default=0.7)
    p.add_argument("--mri-noise", type=float, default=0.02)
    p.add_argument("--pet-noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("split", help="subject-level train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--val", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--config", default=None, help="JSON config file; flags override")
    p.add_argument("--out", default=None)
    p.add_argument("--model", choices=("pix2pix", "cyclegan", "sharegan"), default=None)
    p.add_argument("--cond", choices=("none", "image_add", "latent_add", "latent_concat"),
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--adv", choices=("log", "lsgan"), default=None)
    p.add_argument("--lr-schedule", choices=("constant", "linear"), default=None)
    p.add_argument("--decay-start", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--steps", type=int, default=None, help="hard cap on optimizer steps")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--lambda-l1", type=float, default=None)
    p.add_argument("--lambda-cyc1", type=float, default=None)
    p.add_argument("--lambda-cyc2", type=float, default=None)
    p.add_argument("--lambda-idt", type=float, default=None)
    p.add_argument("--lambda-cls", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="translate one MRI volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mri", required=True)
    p.add_argument("--abeta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated PET against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.add_argument("--target-mask", required=True)
    p.add_argument("--cerebellum-mask", required=True)
    p.add_argument("--threshold", type=float, default=1.19)
    p.add_argument("--labels", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render per-image view montages")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.add_argument("--max-images", type=int, default=8)
    p.add_argument("--loss-log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, OSError, ValueError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
