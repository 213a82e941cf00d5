"""Content-based slice retrieval: histogram + thumbnail features, exact search.

Features are a 64-bin intensity histogram (L1-normalized over nonzero
pixels) concatenated with a 16x16 area-averaged thumbnail, computed on one
normalized modality. Search is exhaustive Euclidean nearest-neighbor; the
database here is a few hundred slices, so nothing fancier is warranted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import normalize_intensity
from .storage import read_tensors, write_tensors


@dataclass(frozen=True)
class FeatureConfig:
    bins: int = 64
    thumb_size: int = 16
    modality: str = "T1"
    min_brain_pixels: int = 500

    def __post_init__(self):
        if self.bins < 1 or self.thumb_size < 1:
            raise ValueError("bins and thumb_size must be >= 1")

    @property
    def dim(self) -> int:
        return self.bins + self.thumb_size * self.thumb_size


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    source: tuple
    empty: bool = False


@dataclass(frozen=True)
class RetrievalIndex:
    """Feature matrix over (subject, slice) entries, ordered and queryable."""

    features: np.ndarray
    sources: tuple
    config: FeatureConfig

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != self.config.dim:
            raise ValueError("feature matrix shape %s inconsistent" % (self.features.shape,))
        if len(self.sources) != self.features.shape[0]:
            raise ValueError("sources and features disagree in length")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("duplicate (subject, slice) sources in index")

    def __len__(self) -> int:
        return self.features.shape[0]


def area_average(img: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Exact area-averaged downsample via a bilinearly sampled integral image."""
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    s = np.zeros((h + 1, w + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)

    def sample_axis(table, positions, axis):
        idx = np.clip(np.floor(positions).astype(int), 0, table.shape[axis] - 1)
        frac = positions - idx
        upper = np.minimum(idx + 1, table.shape[axis] - 1)
        lo = np.take(table, idx, axis=axis)
        hi = np.take(table, upper, axis=axis)
        shape = [1, 1]
        shape[axis] = len(positions)
        f = frac.reshape(shape)
        return lo * (1 - f) + hi * f

    ys = np.linspace(0.0, h, out_rows + 1)
    xs = np.linspace(0.0, w, out_cols + 1)
    g = sample_axis(sample_axis(s, ys, 0), xs, 1)
    cells = g[1:, 1:] - g[:-1, 1:] - g[1:, :-1] + g[:-1, :-1]
    return cells * (out_rows * out_cols / (h * w))


def extract_features(slice01: np.ndarray, config: FeatureConfig) -> FeatureVector:
    """Feature vector for one normalized slice; all-zero slices are flagged."""
    a = np.asarray(slice01, dtype=np.float64)
    if a.size and (a.min() < 0 or a.max() > 1 + 1e-9):
        raise ValueError("slice must be normalized to [0, 1]")
    mask = a > 0
    n = int(mask.sum())
    if n == 0:
        return FeatureVector(np.zeros(config.dim), source=("", -1), empty=True)
    vals = a[mask]
    idx = np.minimum((vals * config.bins).astype(int), config.bins - 1)
    hist = np.bincount(idx, minlength=config.bins).astype(np.float64) / n
    thumb = area_average(a, config.thumb_size, config.thumb_size)
    return FeatureVector(np.concatenate([hist, thumb.ravel()]), source=("", -1), empty=False)


def build_index(volumes, config: FeatureConfig | None = None) -> RetrievalIndex:
    """Index every labeled slice whose brain area meets the minimum pixel count."""
    config = config if config is not None else FeatureConfig()
    rows = []
    sources = []
    for vol in sorted(volumes, key=lambda v: v.subject_id):
        if vol.labels is None:
            raise ValueError("volume %s has no labels; cannot index" % vol.subject_id)
        data = vol.modalities[config.modality]
        for k in range(vol.num_slices):
            if int((vol.labels[k] > 0).sum()) < config.min_brain_pixels:
                continue
            feat = extract_features(normalize_intensity(data[k]), config)
            rows.append(feat.values)
            sources.append((vol.subject_id, k))
    features = np.vstack(rows) if rows else np.zeros((0, config.dim))
    return RetrievalIndex(features=features, sources=tuple(sources), config=config)


def query_top_k(index: RetrievalIndex, query: FeatureVector, k: int, exclude_subject=None):
    """k nearest entries by Euclidean distance, ascending; ties break on source."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query.values, dtype=np.float64)
    if q.shape != (index.config.dim,):
        raise ValueError(
            "query dimension %s does not match index dimension %d" % (q.shape, index.config.dim)
        )
    keep = [
        i for i, (sid, _) in enumerate(index.sources) if sid != exclude_subject
    ]
    if not keep:
        raise ValueError("index empty after excluding subject %r" % exclude_subject)
    d = np.sqrt(((index.features[keep] - q) ** 2).sum(axis=1))
    ranked = sorted(range(len(keep)), key=lambda j: (d[j], index.sources[keep[j]]))
    out = []
    for j in ranked[: min(k, len(keep))]:
        out.append((index.sources[keep[j]], float(d[j])))
    return out


def save_index(index: RetrievalIndex, path) -> None:
    extra = {
        "kind": "retrieval_index",
        "bins": index.config.bins,
        "thumb_size": index.config.thumb_size,
        "modality": index.config.modality,
        "min_brain_pixels": index.config.min_brain_pixels,
        "sources": " ".join("%s/%d" % (sid, sl) for sid, sl in index.sources),
    }
    write_tensors(path, {"features": index.features.astype(np.float64)}, extra=extra)


def load_index(path) -> RetrievalIndex:
    tensors, extra = read_tensors(path)
    if extra.get("kind") != "retrieval_index":
        raise ValueError("%s is not a retrieval index file" % path)
    config = FeatureConfig(
        bins=int(extra["bins"]),
        thumb_size=int(extra["thumb_size"]),
        modality=extra["modality"],
        min_brain_pixels=int(extra["min_brain_pixels"]),
    )
    sources = []
    raw = extra.get("sources", "").split()
    for token in raw:
        sid, sl = token.rsplit("/", 1)
        sources.append((sid, int(sl)))
    return RetrievalIndex(features=tensors["features"], sources=tuple(sources), config=config)
