"""Shared domain types: volumes, label maps, channel stacks, patches, palette.

All types are immutable after construction and all operations are pure,
so they are safe to use from concurrent workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_CLASSES = 6
CLASS_NAMES = ("background", "csf", "gm", "wm", "brainstem", "cerebellum")
MODALITIES = ("T1", "T1IR", "T2FLAIR")
PATCH_SIZE = 64


@dataclass(frozen=True)
class ClassPalette:
    """Display grays for the six tissue classes (background=black, WM=white)."""

    names: tuple = CLASS_NAMES
    grays: tuple = (0, 85, 170, 255, 45, 212)

    def __post_init__(self):
        if len(self.names) != NUM_CLASSES or len(self.grays) != NUM_CLASSES:
            raise ValueError("palette must have exactly %d entries" % NUM_CLASSES)
        if len(set(self.names)) != NUM_CLASSES:
            raise ValueError("palette class names must be unique")

    def apply(self, labels: np.ndarray) -> np.ndarray:
        """Map a class-index array to a uint8 gray image."""
        lut = np.asarray(self.grays, dtype=np.uint8)
        return lut[np.asarray(labels)]


PALETTE = ClassPalette()


def _as_label_array(labels) -> np.ndarray:
    if isinstance(labels, LabelMap):
        return labels.classes
    return np.asarray(labels)


@dataclass(frozen=True)
class Volume:
    """A 3D multi-modality scan plus optional label volume.

    modalities maps each name in MODALITIES to a (slices, rows, cols) array;
    labels, when present, shares that shape and holds class indices 0..5.
    """

    modalities: dict
    labels: np.ndarray | None
    spacing: tuple
    subject_id: str

    def __post_init__(self):
        if set(self.modalities) != set(MODALITIES):
            raise ValueError(
                "expected modalities %s, got %s" % (MODALITIES, tuple(self.modalities))
            )
        shapes = {m: a.shape for m, a in self.modalities.items()}
        if len(set(shapes.values())) != 1:
            raise ValueError("modality shapes disagree: %s" % shapes)
        shape = next(iter(shapes.values()))
        if len(shape) != 3:
            raise ValueError("modality arrays must be 3D, got shape %s" % (shape,))
        if self.labels is not None:
            if self.labels.shape != shape:
                raise ValueError(
                    "label shape %s does not match modality shape %s"
                    % (self.labels.shape, shape)
                )
            if self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES:
                raise ValueError("label values must lie in [0, %d)" % NUM_CLASSES)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be 3 positive components, got %s" % (self.spacing,))

    @property
    def shape(self) -> tuple:
        return self.modalities[MODALITIES[0]].shape

    @property
    def num_slices(self) -> int:
        return self.shape[0]

    def label_slice(self, index: int) -> "LabelMap":
        if self.labels is None:
            raise ValueError("volume %s has no labels" % self.subject_id)
        return LabelMap(self.labels[index])


@dataclass(frozen=True)
class LabelMap:
    """A 2D per-pixel class-index map over the six tissue classes."""

    classes: np.ndarray
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        a = self.classes
        if a.ndim != 2:
            raise ValueError("label map must be 2D, got shape %s" % (a.shape,))
        if a.size and (a.min() < 0 or a.max() >= self.num_classes):
            raise ValueError("label values must lie in [0, %d)" % self.num_classes)

    @property
    def shape(self) -> tuple:
        return self.classes.shape


@dataclass(frozen=True)
class ChannelStack:
    """Per-slice network input: 3 modality channels, optionally + 1 prior channel.

    Modality channels are normalized to [0, 1]; the prior channel, when present,
    holds label indices rescaled by 1 / (NUM_CLASSES - 1).
    """

    channels: np.ndarray
    has_prior: bool

    def __post_init__(self):
        c = self.channels
        if c.ndim != 3:
            raise ValueError("channel stack must be (rows, cols, C), got %s" % (c.shape,))
        expected = 3 + (1 if self.has_prior else 0)
        if c.shape[2] != expected:
            raise ValueError(
                "channel count %d inconsistent with has_prior=%s" % (c.shape[2], self.has_prior)
            )
        if c.size and (c.min() < -1e-6 or c.max() > 1 + 1e-6):
            raise ValueError("channel values must lie in [0, 1]")

    @property
    def shape(self) -> tuple:
        return self.channels.shape


@dataclass(frozen=True)
class Patch:
    """A 64x64 training window cut from a slice.

    prior_used records the gate outcome for the prior channel: True when a
    real prior fills channel 3, False when the gate rejected (zero fill),
    None for 3-channel patches.
    """

    data: np.ndarray
    target: np.ndarray
    origin: tuple
    prior_used: bool | None = None

    def __post_init__(self):
        if self.data.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError("patch data must be %dx%d spatially" % (PATCH_SIZE, PATCH_SIZE))
        if self.target.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError("patch target must be %dx%d" % (PATCH_SIZE, PATCH_SIZE))


def onehot_encode(labels) -> np.ndarray:
    """One-hot encode a label map to a (rows, cols, NUM_CLASSES) float array."""
    a = _as_label_array(labels)
    if a.ndim != 2:
        raise ValueError("expected a 2D label map, got shape %s" % (a.shape,))
    bad = (a < 0) | (a >= NUM_CLASSES)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError("label %r out of range at pixel (%d, %d)" % (a[r, c], r, c))
    eye = np.eye(NUM_CLASSES, dtype=np.float64)
    return eye[a.astype(np.intp)]


def onehot_decode(probs: np.ndarray) -> LabelMap:
    """Per-pixel argmax over the class axis; ties break to the lowest class."""
    p = np.asarray(probs)
    if p.ndim != 3 or p.shape[2] != NUM_CLASSES:
        raise ValueError("expected (rows, cols, %d), got %s" % (NUM_CLASSES, p.shape))
    if not np.isfinite(p).all():
        raise ValueError("non-finite values in probability array")
    return LabelMap(p.argmax(axis=2).astype(np.uint8))


def normalize_intensity(slice2d: np.ndarray) -> np.ndarray:
    """Min-max rescale a slice to [0, 1]; a constant slice maps to all zeros."""
    a = np.asarray(slice2d, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("non-finite values in slice")
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def extract_patch(stack: ChannelStack, target, origin: tuple) -> Patch:
    """Cut the 64x64 window at origin=(row, col) out of a stack and its target."""
    r0, c0 = origin
    rows, cols = stack.channels.shape[:2]
    if r0 < 0 or c0 < 0 or r0 + PATCH_SIZE > rows or c0 + PATCH_SIZE > cols:
        raise ValueError(
            "patch origin (%d, %d) out of bounds for %dx%d slice" % (r0, c0, rows, cols)
        )
    t = _as_label_array(target)
    if t.shape != (rows, cols):
        raise ValueError("target shape %s does not match slice %s" % (t.shape, (rows, cols)))
    data = stack.channels[r0 : r0 + PATCH_SIZE, c0 : c0 + PATCH_SIZE].copy()
    tgt = t[r0 : r0 + PATCH_SIZE, c0 : c0 + PATCH_SIZE].copy()
    return Patch(data=data, target=tgt, origin=(r0, c0))
