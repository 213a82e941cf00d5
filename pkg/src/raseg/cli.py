"""Command-line pipeline: phantom, index, train, segment, evaluate, boxplot,
overlay. Every subcommand accepts --config FILE (flat key: value text) whose
entries become flag defaults; explicit flags override. Commands exit 0 on
success and print a single machine-parsable ``error: ...`` line on failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, reports, retrieval, storage, training
from .config import apply_config, load_config_file
from .core import MODALITIES
from .inference import StitchConfig, segment_volume
from .network import NetworkConfig, load_checkpoint
from .phantom import PhantomSpec, generate_cohort
from .priors import PriorContext
from .retrieval import FeatureConfig

MODES = ("three", "four_own_gt", "four_retrieved")


def _ids(text):
    return [t for t in text.split(",") if t] if text else []


def _load_dataset(manifest_path, ids=None):
    manifests = storage.read_dataset_manifest(manifest_path)
    if ids:
        by_id = {m.subject_id: m for m in manifests}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ValueError("subjects %s not in %s" % (missing, manifest_path))
        manifests = [by_id[i] for i in ids]
    return manifests


def _prior_context(args, manifest_path):
    """Context for four_retrieved: database volumes come from the index sources."""
    index = retrieval.load_index(args.index)
    db_ids = sorted({sid for sid, _ in index.sources})
    db = [storage.load_volume(m) for m in _load_dataset(manifest_path, db_ids)]
    return PriorContext(index, db, threshold=args.gate_threshold)


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = PhantomSpec(
        seed=args.seed,
        shape=(args.slices, args.height, args.width),
        noise_std=args.noise_std,
        deformation_px=args.deformation,
    )
    volumes = generate_cohort(args.count, spec)
    manifests = [storage.save_volume(v, out) for v in volumes]
    storage.write_dataset_manifest(manifests, out / "manifest.txt")
    if args.count == 0:
        print("warning: count=0, wrote an empty manifest", file=sys.stderr)
    print("wrote %d subjects under %s" % (len(manifests), out))
    return 0


def cmd_index(args) -> int:
    manifests = _load_dataset(args.data, _ids(args.ids))
    volumes = [storage.load_volume(m) for m in manifests]
    config = FeatureConfig(
        bins=args.bins, thumb_size=args.thumb_size, min_brain_pixels=args.min_brain_pixels
    )
    index = retrieval.build_index(volumes, config)
    retrieval.save_index(index, args.out)
    print("indexed %d slices from %d subjects into %s" % (len(index), len(volumes), args.out))
    return 0


def _default_split(manifests):
    ids = [m.subject_id for m in manifests]
    if len(ids) < 3:
        raise ValueError("need at least 3 subjects for the default split")
    return ids[:-2], ids[-2:]


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifests = storage.read_dataset_manifest(args.data)
    train_ids = _ids(args.train_ids)
    test_ids = _ids(args.test_ids)
    if not train_ids and not test_ids:
        train_ids, test_ids = _default_split(manifests)
    train_m, test_m = storage.make_split(manifests, train_ids, test_ids)
    train_vols = [storage.load_volume(m) for m in train_m]
    test_vols = [storage.load_volume(m) for m in test_m]
    prior_context = None
    if args.mode == "four_retrieved":
        if not args.index:
            raise ValueError("--index is required for mode four_retrieved")
        prior_context = _prior_context(args, args.data)
    config = training.TrainConfig(
        epochs=args.epochs,
        patches_per_epoch=args.patches_per_epoch,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        base_seed=args.base_seed,
        channel_mode=args.mode,
        gate_threshold=args.gate_threshold,
        repetitions=args.reps,
    )
    net_config = NetworkConfig(
        in_channels=config.in_channels, depth=args.depth, base_filters=args.base_filters
    )
    stitch = StitchConfig(stride=args.stride)
    records = training.run_repeated(
        config, net_config, train_vols, test_vols, prior_context, stitch, out_dir=out
    )
    reports.write_records_csv(records, out / ("records_%s.csv" % args.mode))
    evaluation.write_dice_report(
        evaluation.summarize(records), out / ("summary_%s.txt" % args.mode)
    )
    for r in records:
        print(
            "run %d seed %d: %s"
            % (
                r.run_index,
                r.seed,
                " ".join("%s=%.4f" % (c, r.dsc[c]) for c in evaluation.EVAL_CLASSES),
            )
        )
    return 0


def cmd_segment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = load_checkpoint(args.checkpoint)
    manifests = _load_dataset(args.data, [args.subject])
    volume = storage.load_volume(manifests[0])
    prior_context = None
    if args.mode == "four_retrieved":
        if not args.index:
            raise ValueError("--index is required for mode four_retrieved")
        prior_context = _prior_context(args, args.data)
    stitch = StitchConfig(stride=args.stride)
    labels, decisions = segment_volume(state, volume, args.mode, prior_context, stitch)
    pred_path = out / ("%s_pred.vol" % volume.subject_id)
    storage.write_array(pred_path, labels.astype(np.uint8), spacing_mm=volume.spacing)
    if args.mode == "four_retrieved":
        reports.write_gate_log(decisions, out / ("%s_gate.csv" % volume.subject_id))
    print("wrote %s" % pred_path)
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifests = _load_dataset(args.data, _ids(args.ids))
    pred_dir = Path(args.pred)
    preds = []
    truths = []
    rows = []
    for m in manifests:
        pred_path = pred_dir / ("%s_pred.vol" % m.subject_id)
        if not pred_path.exists():
            raise ValueError("missing prediction for subject %s (%s)" % (m.subject_id, pred_path))
        volume = storage.load_volume(m)
        if volume.labels is None:
            raise ValueError("subject %s has no ground-truth labels" % m.subject_id)
        pred, _ = storage.read_array(pred_path)
        report = evaluation.evaluate_volume(pred, volume.labels)
        evaluation.write_dice_report(report, out / ("dice_%s.txt" % m.subject_id))
        rows.append((m.subject_id, report))
        preds.append(pred)
        truths.append(volume.labels)
    pooled = evaluation.evaluate_volumes(preds, truths)
    evaluation.write_dice_report(pooled, out / "dice_summary.txt")
    with open(out / "dice_per_subject.csv", "w", encoding="ascii") as fh:
        fh.write("subject,csf,gm,wm\n")
        for sid, report in rows:
            fh.write(
                "%s,%s\n"
                % (sid, ",".join("%.6f" % report.mean[c] for c in evaluation.EVAL_CLASSES))
            )
    for c in evaluation.EVAL_CLASSES:
        print("%s: %.4f" % (c, pooled.mean[c]))
    return 0


def cmd_boxplot(args) -> int:
    records = reports.read_records_csv(args.records)
    if args.best:
        records = evaluation.select_best(records, args.best)
    png = reports.emit_boxplot(records, args.out)
    print("wrote %s and %s" % (args.out, png))
    return 0


def cmd_overlay(args) -> int:
    manifests = _load_dataset(args.data, [args.subject])
    volume = storage.load_volume(manifests[0])
    if volume.labels is None:
        raise ValueError("subject %s has no ground-truth labels" % args.subject)
    pred3, _ = storage.read_array(args.pred3)
    pred4, _ = storage.read_array(args.pred4)
    k = args.slice
    reports.emit_overlay(
        volume.modalities["T1"][k], volume.labels[k], pred3[k], pred4[k], args.out
    )
    print("wrote %s" % args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raseg", description="Retrieval-augmented tissue segmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="key: value defaults file")

    p = sub.add_parser("phantom", help="generate synthetic subjects")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slices", type=int, default=24)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--noise-std", type=float, default=14.0)
    p.add_argument("--deformation", type=float, default=2.5)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("index", help="build the retrieval index")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ids", default="", help="comma-separated subject ids (default: all)")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--thumb-size", type=int, default=16)
    p.add_argument("--min-brain-pixels", type=int, default=500)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="train one mode with repeated runs")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", default="")
    p.add_argument("--train-ids", default="")
    p.add_argument("--test-ids", default="")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--patches-per-epoch", type=int, default=1600)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--gate-threshold", type=float, default=0.7)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--base-filters", type=int, default=16)
    p.add_argument("--stride", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one subject with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--index", default="")
    p.add_argument("--gate-threshold", type=float, default=0.7)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ids", default="", help="comma-separated subject ids (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("boxplot", help="emit boxplot data + figure from records")
    common(p)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--best", type=int, default=0, help="keep only the k best runs first")
    p.set_defaults(func=cmd_boxplot)

    p = sub.add_parser("overlay", help="emit a 4-panel comparison image")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--slice", type=int, required=True)
    p.add_argument("--pred3", required=True)
    p.add_argument("--pred4", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        # find the subcommand parser and re-parse with config-backed defaults
        sub_actions = [
            a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        ]
        sub_parser = sub_actions[0].choices[args.command]
        try:
            apply_config(sub_parser, load_config_file(args.config))
        except (OSError, ValueError) as exc:
            print("error: %s" % exc, file=sys.stderr)
            return 1
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
