"""Rigid 2D registration with an L1-overlap similarity score, plus the gate
that decides whether a retrieved label map is trusted as the prior channel.

The similarity S(A, B) = 1 - |A - B|_1 / |A + B|_1 on nonnegative images:
1 for identical images, 0 for non-overlapping ones. Registration maximizes
S over rotation + translation with a deterministic coarse-to-fine grid
search; the objective is non-smooth, so grids beat gradient methods here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import LabelMap, normalize_intensity


@dataclass(frozen=True)
class RigidTransform2D:
    """Rotation (radians, about image center) plus (dr, dc) pixel translation."""

    rotation: float
    translation: tuple

    def __post_init__(self):
        if not (-math.pi < self.rotation <= math.pi):
            raise ValueError("rotation must lie in (-pi, pi]")


IDENTITY = RigidTransform2D(0.0, (0.0, 0.0))


@dataclass(frozen=True)
class SearchSettings:
    """Coarse grid bounds (full-resolution pixels / radians) and refinement."""

    translation_range: float = 16.0
    translation_step: float = 2.0
    rotation_range: float = math.radians(15.0)
    rotation_step: float = math.radians(3.0)
    levels: int = 3


@dataclass(frozen=True)
class GateDecision:
    """Outcome of gating one retrieved slice against a query slice."""

    use_prior: bool
    similarity: float
    transform: RigidTransform2D
    matched_source: tuple
    warped_prior: LabelMap | None

    def __post_init__(self):
        if self.use_prior != (self.warped_prior is not None):
            raise ValueError("warped_prior must be present iff use_prior")


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """L1-overlap similarity of two same-shape nonnegative images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch: %s vs %s" % (a.shape, b.shape))
    if a.size == 0:
        return 1.0
    if a.min() < 0 or b.min() < 0:
        raise ValueError("similarity requires nonnegative images")
    denom = float(np.abs(a + b).sum())
    if denom == 0.0:
        return 1.0
    return 1.0 - float(np.abs(a - b).sum()) / denom


def _transform_args(shape, transform: RigidTransform2D):
    """scipy affine_transform matrix/offset for sampling the moving image."""
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    cs, sn = math.cos(transform.rotation), math.sin(transform.rotation)
    rot = np.array([[cs, -sn], [sn, cs]])
    inv = rot.T
    t = np.asarray(transform.translation, dtype=np.float64)
    offset = center - inv @ (center + t)
    return inv, offset


def warp_image(img: np.ndarray, transform: RigidTransform2D) -> np.ndarray:
    """Apply a rigid transform with bilinear resampling; outside pixels -> 0."""
    matrix, offset = _transform_args(img.shape, transform)
    return ndimage.affine_transform(
        np.asarray(img, dtype=np.float64), matrix, offset=offset, order=1, mode="constant", cval=0.0
    )


def warp_labels(labels, transform: RigidTransform2D) -> LabelMap:
    """Warp a categorical map with nearest-neighbor resampling; outside -> background."""
    arr = labels.classes if isinstance(labels, LabelMap) else np.asarray(labels)
    matrix, offset = _transform_args(arr.shape, transform)
    warped = ndimage.affine_transform(
        arr, matrix, offset=offset, order=0, mode="constant", cval=0
    )
    return LabelMap(warped.astype(np.uint8))


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    h, w = img.shape
    h2, w2 = (h // factor) * factor, (w // factor) * factor
    a = img[:h2, :w2]
    return a.reshape(h2 // factor, factor, w2 // factor, factor).mean(axis=(1, 3))


def _grid(center: float, half_range: float, step: float):
    n = int(round(half_range / step))
    return [center + i * step for i in range(-n, n + 1)]


def register(fixed: np.ndarray, moving: np.ndarray, settings: SearchSettings | None = None):
    """Find the rigid transform maximizing similarity(fixed, warped moving).

    Returns (transform, warped moving image, similarity after warp). The
    identity transform is always evaluated at full resolution, so the
    returned similarity never falls below the unregistered similarity.
    """
    settings = settings if settings is not None else SearchSettings()
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    if fixed.shape != moving.shape:
        raise ValueError("shape mismatch: %s vs %s" % (fixed.shape, moving.shape))
    if fixed.min() < 0 or moving.min() < 0:
        raise ValueError("register requires nonnegative (normalized) images")
    if fixed.max() == 0 or moving.max() == 0:
        return IDENTITY, moving.copy(), similarity(fixed, moving)

    factors = [2 ** (settings.levels - 1 - i) for i in range(settings.levels)]
    best = (0.0, (0.0, 0.0))  # (rotation, (dr, dc)) incumbent, full-res units
    t_step, r_step = settings.translation_step, settings.rotation_step
    for li, factor in enumerate(factors):
        f_img = _downsample(fixed, factor)
        m_img = _downsample(moving, factor)
        if li == 0:
            rots = _grid(0.0, settings.rotation_range, r_step)
            drs = _grid(0.0, settings.translation_range, t_step)
            dcs = drs
        else:
            t_step, r_step = t_step / 2.0, r_step / 2.0
            rots = _grid(best[0], 2 * r_step, r_step)
            drs = _grid(best[1][0], 2 * t_step, t_step)
            dcs = _grid(best[1][1], 2 * t_step, t_step)
        best_sim = -1.0
        for rot in rots:
            for dr in drs:
                for dc in dcs:
                    t = RigidTransform2D(rot, (dr / factor, dc / factor))
                    s = similarity(f_img, warp_image(m_img, t))
                    if s > best_sim:
                        best_sim = s
                        best = (rot, (dr, dc))

    candidate = RigidTransform2D(best[0], best[1])
    warped = warp_image(moving, candidate)
    cand_sim = similarity(fixed, warped)
    ident_sim = similarity(fixed, moving)
    if ident_sim >= cand_sim:
        return IDENTITY, moving.copy(), ident_sim
    return candidate, warped, cand_sim


def gate_fourth_channel(
    query_slice: np.ndarray,
    retrieved_slice: np.ndarray,
    retrieved_labels,
    threshold: float,
    source: tuple = ("", -1),
    settings: SearchSettings | None = None,
) -> GateDecision:
    """Register the retrieved slice to the query and gate its label map.

    The retrieved labels become the prior only when the post-registration
    similarity exceeds the threshold; otherwise the caller falls back to
    the plain three-channel input.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    fixed = normalize_intensity(query_slice)
    moving = normalize_intensity(retrieved_slice)
    transform, _, sim = register(fixed, moving, settings)
    use_prior = sim > threshold
    warped = warp_labels(retrieved_labels, transform) if use_prior else None
    return GateDecision(
        use_prior=use_prior,
        similarity=sim,
        transform=transform,
        matched_source=tuple(source),
        warped_prior=warped,
    )
