"""Dice evaluation over the three scored tissue classes, run statistics and
the best-of-k selection used by the repeated-run protocol.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CLASS_NAMES, NUM_CLASSES

EVAL_CLASSES = ("csf", "gm", "wm")
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")


@dataclass
class DiceReport:
    """Per-class DSC values with run-level statistics."""

    classes: tuple
    per_run: dict = field(default_factory=dict)  # class name -> list of DSC
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    both_empty: dict = field(default_factory=dict)

    def overall_mean(self) -> float:
        return float(np.mean([self.mean[c] for c in self.classes]))


def confusion(pred: np.ndarray, truth: np.ndarray, class_id: int) -> ConfusionCounts:
    p = np.asarray(pred) == class_id
    t = np.asarray(truth) == class_id
    if p.shape != t.shape:
        raise ValueError("shape mismatch: %s vs %s" % (p.shape, t.shape))
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def dice_flagged(pred, truth, class_id: int):
    """DSC = 2TP / (2TP + FP + FN); both-empty masks score 1 with a flag."""
    if not (0 <= class_id < NUM_CLASSES):
        raise ValueError("class_id must lie in [0, %d)" % NUM_CLASSES)
    c = confusion(pred, truth, class_id)
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0, True
    return 2.0 * c.tp / denom, False


def dice(pred, truth, class_id: int) -> float:
    return dice_flagged(pred, truth, class_id)[0]


def evaluate_volume(pred: np.ndarray, truth: np.ndarray, all_classes: bool = False) -> DiceReport:
    """Single-run DSC report for CSF/GM/WM (optionally every class)."""
    names = CLASS_NAMES[1:] if all_classes else EVAL_CLASSES
    report = DiceReport(classes=tuple(names))
    for name in names:
        val, empty = dice_flagged(pred, truth, CLASS_IDS[name])
        report.per_run[name] = [val]
        report.mean[name] = val
        report.std[name] = 0.0
        report.both_empty[name] = empty
    return report


def evaluate_volumes(preds, truths, all_classes: bool = False) -> DiceReport:
    """DSC over a subject set with all voxels pooled into one count."""
    if len(preds) != len(truths):
        raise ValueError("prediction and truth sets differ in length")
    pred = np.concatenate([np.asarray(p).ravel() for p in preds])
    truth = np.concatenate([np.asarray(t).ravel() for t in truths])
    return evaluate_volume(pred, truth, all_classes=all_classes)


def record_mean_dsc(record) -> float:
    """Ranking key: unweighted mean of the three scored per-class DSC values."""
    return float(np.mean([record.dsc[c] for c in EVAL_CLASSES]))


def select_best(records, k: int):
    """Top-k run records by mean DSC, descending; ties keep the lower run index."""
    records = list(records)
    if not records:
        raise ValueError("no run records to select from")
    if k > len(records):
        raise ValueError("k=%d exceeds %d records" % (k, len(records)))
    ranked = sorted(records, key=lambda r: (-record_mean_dsc(r), r.run_index))
    return ranked[:k]


def summarize(records) -> DiceReport:
    """Mean and population std of per-class DSC across run records."""
    records = list(records)
    if not records:
        raise ValueError("no run records to summarize")
    report = DiceReport(classes=EVAL_CLASSES)
    for name in EVAL_CLASSES:
        vals = [r.dsc[name] for r in records]
        report.per_run[name] = vals
        report.mean[name] = float(np.mean(vals))
        report.std[name] = float(np.std(vals))
        report.both_empty[name] = False
    return report


def format_mean_std(mean: float, std: float) -> str:
    return "%.4f±%.4f" % (mean, std)


def write_dice_report(report: DiceReport, path) -> None:
    """Human-readable summary: one 'class: mean±std' line per class."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in report.classes:
            fh.write("%s: %s\n" % (name, format_mean_std(report.mean[name], report.std[name])))
        fh.write("overall: %.4f\n" % report.overall_mean())
