"""Report emitters: run-record tables, boxplot data + figure, overlay panels,
and gate-decision logs. Plot data always lands in plain delimited text so
nothing downstream depends on a rendering backend; a PNG is rendered next
to it via matplotlib.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .core import PALETTE, normalize_intensity
from .evaluation import EVAL_CLASSES
from .training import RunRecord

CAPTION_HEIGHT = 14
PANEL_GAP = 4
OVERLAY_CAPTIONS = ("(a) Input", "(b) Ground Truth", "(c) 3 channels", "(d) 4 channels")


def write_records_csv(records, path) -> None:
    """One row per run: index, seed, per-class DSC, per-epoch losses."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_index", "seed", "csf", "gm", "wm", "epoch_losses", "checkpoint"])
        for r in records:
            dsc = r.dsc or {}
            writer.writerow(
                [
                    r.run_index,
                    r.seed,
                    *("%.6f" % dsc[c] if c in dsc else "" for c in EVAL_CLASSES),
                    ";".join("%.6f" % v for v in r.epoch_losses),
                    r.checkpoint or "",
                ]
            )


def read_records_csv(path):
    records = []
    with open(path, encoding="ascii", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                RunRecord(
                    run_index=int(row["run_index"]),
                    seed=int(row["seed"]),
                    epoch_losses=[float(v) for v in row["epoch_losses"].split(";") if v],
                    checkpoint=row["checkpoint"] or None,
                    dsc={c: float(row[c]) for c in EVAL_CLASSES if row[c]},
                )
            )
    return records


def five_number_summary(values):
    """(min, q1, median, q3, max) with linearly interpolated quartiles."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarize an empty value list")
    return tuple(float(np.percentile(v, q)) for q in (0, 25, 50, 75, 100))


def emit_boxplot(records, out_file) -> Path:
    """Write per-class five-number summaries + raw values; render a PNG twin.

    Returns the path of the rendered image (same stem, .png suffix).
    """
    records = list(records)
    if not records:
        raise ValueError("no run records to plot")
    out_file = Path(out_file)
    per_class = {c: [r.dsc[c] for r in records] for c in EVAL_CLASSES}
    with open(out_file, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "n", "min", "q1", "median", "q3", "max", "values"])
        for c in EVAL_CLASSES:
            summary = five_number_summary(per_class[c])
            writer.writerow(
                [
                    c,
                    len(per_class[c]),
                    *("%.6f" % s for s in summary),
                    ";".join("%.6f" % v for v in per_class[c]),
                ]
            )
    png = out_file.with_suffix(".png")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot(
        [per_class[c] for c in EVAL_CLASSES],
        tick_labels=[c.upper() for c in EVAL_CLASSES],
        whis=(0, 100),
    )
    ax.set_ylabel("Dice similarity coefficient")
    ax.set_title("Per-class DSC across runs")
    fig.tight_layout()
    fig.savefig(png, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return png


def _caption_strip(width: int, text: str) -> np.ndarray:
    img = Image.new("L", (width, CAPTION_HEIGHT), color=0)
    draw = ImageDraw.Draw(img)
    draw.text((2, 1), text, fill=255, font=ImageFont.load_default())
    return np.asarray(img)


def compose_overlay(input_slice, truth, pred3, pred4) -> np.ndarray:
    """Build the 4-panel gray image: input, truth, 3-channel and 4-channel maps."""
    panels = []
    gray_in = np.round(normalize_intensity(np.asarray(input_slice)) * 255).astype(np.uint8)
    panels.append(gray_in)
    for labels in (truth, pred3, pred4):
        arr = labels.classes if hasattr(labels, "classes") else np.asarray(labels)
        if arr.shape != gray_in.shape:
            raise ValueError("panel shape %s mismatches input %s" % (arr.shape, gray_in.shape))
        panels.append(PALETTE.apply(arr))
    h, w = gray_in.shape
    out = np.zeros((h + CAPTION_HEIGHT, 4 * w + 3 * PANEL_GAP), dtype=np.uint8)
    for j, (panel, caption) in enumerate(zip(panels, OVERLAY_CAPTIONS)):
        c0 = j * (w + PANEL_GAP)
        out[:h, c0 : c0 + w] = panel
        out[h:, c0 : c0 + w] = _caption_strip(w, caption)
    return out


def overlay_panel_region(panel_index: int, slice_shape):
    """Row/col slices of one panel's image area inside a composed overlay."""
    h, w = slice_shape
    c0 = panel_index * (w + PANEL_GAP)
    return slice(0, h), slice(c0, c0 + w)


def emit_overlay(input_slice, truth, pred3, pred4, out_file) -> np.ndarray:
    """Write the composed overlay panel as a PNG; returns the pixel array."""
    composed = compose_overlay(input_slice, truth, pred3, pred4)
    Image.fromarray(composed, mode="L").save(Path(out_file), format="PNG")
    return composed


def write_gate_log(decisions, path) -> None:
    """Per-slice gate audit: matched source, similarity, used or not."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "matched_subject", "matched_slice", "similarity", "used"])
        for k, d in enumerate(decisions):
            if d is None:
                writer.writerow([k, "", "", "", ""])
            else:
                writer.writerow(
                    [k, d.matched_source[0], d.matched_source[1], "%.6f" % d.similarity,
                     "yes" if d.use_prior else "no"]
                )
