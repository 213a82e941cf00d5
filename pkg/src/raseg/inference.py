"""Full-slice and full-volume prediction: channel assembly plus sliding-window
stitching with overlap-averaged probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NUM_CLASSES,
    ChannelStack,
    LabelMap,
    Volume,
    normalize_intensity,
    onehot_decode,
)
from .network import NetworkState, forward
from .priors import PriorContext

CHANNEL_MODES = ("three", "four_own_gt", "four_retrieved")


@dataclass(frozen=True)
class StitchConfig:
    window: int = 64
    stride: int = 32
    padding: str = "reflect"

    def __post_init__(self):
        if not (1 <= self.stride <= self.window):
            raise ValueError("stride must satisfy 1 <= stride <= window")


def assemble_channels(
    volume: Volume,
    slice_index: int,
    mode: str,
    prior_context: PriorContext | None = None,
):
    """Build the network input for one slice; returns (stack, gate decision).

    Modality channels are per-slice normalized in fixed order (T1, T1IR,
    T2FLAIR). In four_retrieved mode the retrieved label map is appended
    after gating (zero channel on rejection) and the decision is returned
    for audit; other modes return None.
    """
    if mode not in CHANNEL_MODES:
        raise ValueError("unknown channel mode %r" % mode)
    if not (0 <= slice_index < volume.num_slices):
        raise ValueError("slice %d out of range for %s" % (slice_index, volume.subject_id))
    planes = [
        normalize_intensity(volume.modalities[m][slice_index]) for m in ("T1", "T1IR", "T2FLAIR")
    ]
    decision = None
    if mode == "three":
        stack = np.stack(planes, axis=2)
        return ChannelStack(stack.astype(np.float32), has_prior=False), None
    if mode == "four_own_gt":
        if volume.labels is None:
            raise ValueError("volume %s has no labels for four_own_gt" % volume.subject_id)
        prior = volume.labels[slice_index].astype(np.float64) / (NUM_CLASSES - 1)
    else:
        if prior_context is None:
            raise ValueError("four_retrieved mode requires a retrieval context")
        decision = prior_context.decide(volume, slice_index)
        if decision.use_prior:
            prior = decision.warped_prior.classes.astype(np.float64) / (NUM_CLASSES - 1)
        else:
            prior = np.zeros(planes[0].shape)
    stack = np.stack(planes + [prior], axis=2)
    return ChannelStack(stack.astype(np.float32), has_prior=True), decision


def _window_starts(size: int, window: int, stride: int):
    if size <= window:
        return [0], window
    n = -(-(size - window) // stride)  # ceil
    return [i * stride for i in range(n + 1)], window + n * stride


def segment_slice(state: NetworkState, stack: ChannelStack, stitch: StitchConfig | None = None):
    """Sliding-window prediction over one slice; returns (labels, probabilities).

    The slice is reflect-padded so windows tile it completely; overlapping
    window softmax outputs are averaged per pixel with uniform weights.
    """
    stitch = stitch if stitch is not None else StitchConfig()
    h, w, c = stack.channels.shape
    if c != state.config.in_channels:
        raise ValueError(
            "stack has %d channels but network expects %d" % (c, state.config.in_channels)
        )
    win = stitch.window
    row_starts, pad_h = _window_starts(h, win, stitch.stride)
    col_starts, pad_w = _window_starts(w, win, stitch.stride)
    padded = np.pad(
        stack.channels, ((0, pad_h - h), (0, pad_w - w), (0, 0)), mode=stitch.padding
    )
    windows = [
        padded[r : r + win, c0 : c0 + win] for r in row_starts for c0 in col_starts
    ]
    batch = np.stack(windows).astype(np.float32)
    prob_sum = np.zeros((pad_h, pad_w, NUM_CLASSES))
    hits = np.zeros((pad_h, pad_w, 1))
    chunk = 32
    outs = [
        forward(state, batch[i : i + chunk], mode="eval") for i in range(0, len(batch), chunk)
    ]
    probs = np.concatenate(outs, axis=0)
    k = 0
    for r in row_starts:
        for c0 in col_starts:
            prob_sum[r : r + win, c0 : c0 + win] += probs[k]
            hits[r : r + win, c0 : c0 + win] += 1.0
            k += 1
    averaged = (prob_sum / hits)[:h, :w]
    return onehot_decode(averaged), averaged


def segment_volume(
    state: NetworkState,
    volume: Volume,
    mode: str,
    prior_context: PriorContext | None = None,
    stitch: StitchConfig | None = None,
):
    """Segment every slice; returns (3D label array, per-slice gate decisions)."""
    labels = np.zeros(volume.shape, dtype=np.uint8)
    decisions = []
    for k in range(volume.num_slices):
        stack, decision = assemble_channels(volume, k, mode, prior_context)
        label_map, _ = segment_slice(state, stack, stitch)
        labels[k] = label_map.classes
        decisions.append(decision)
    return labels, decisions
