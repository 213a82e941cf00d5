"""Bundles retrieval, registration and gating into one per-slice provider.

Gate decisions depend only on the database, the query slice and the
threshold, so they are cached per (subject, slice); repeated training
epochs and runs reuse them instead of re-registering.
"""
from __future__ import annotations

from .core import LabelMap, Volume, normalize_intensity
from .registration import GateDecision, SearchSettings, gate_fourth_channel
from .retrieval import RetrievalIndex, extract_features, query_top_k


class PriorContext:
    """Answers "which prior, if any, for this slice?" against a fixed database."""

    def __init__(
        self,
        index: RetrievalIndex,
        database,
        threshold: float = 0.7,
        exclude_same_subject: bool = True,
        settings: SearchSettings | None = None,
    ):
        if not (0.0 <= threshold <= 1.0):
            raise ValueError("threshold must lie in [0, 1]")
        self.index = index
        self.threshold = threshold
        self.exclude_same_subject = exclude_same_subject
        self.settings = settings
        self._volumes = {}
        for vol in database:
            if vol.labels is None:
                raise ValueError("database volume %s has no labels" % vol.subject_id)
            if vol.subject_id in self._volumes:
                raise ValueError("duplicate database subject id %r" % vol.subject_id)
            self._volumes[vol.subject_id] = vol
        self._cache = {}

    def decide(self, volume: Volume, slice_index: int) -> GateDecision:
        key = (volume.subject_id, slice_index)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        modality = self.index.config.modality
        query = normalize_intensity(volume.modalities[modality][slice_index])
        feat = extract_features(query, self.index.config)
        exclude = volume.subject_id if self.exclude_same_subject else None
        (msid, mslice), _ = query_top_k(self.index, feat, k=1, exclude_subject=exclude)[0]
        matched = self._volumes[msid]
        decision = gate_fourth_channel(
            query,
            normalize_intensity(matched.modalities[modality][mslice]),
            LabelMap(matched.labels[mslice]),
            self.threshold,
            source=(msid, mslice),
            settings=self.settings,
        )
        self._cache[key] = decision
        return decision
