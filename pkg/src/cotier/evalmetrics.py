"""Retrieval metrics: mean average precision and CMC curves.

Galleries are ranked per query by ascending Euclidean distance with a stable
lowest-index tie-break. Queries whose identity never appears in the gallery
are excluded from the averages and counted in the report instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class RetrievalSplit:
    """Embedded query and gallery sets with their identities."""

    query_embeddings: np.ndarray
    query_ids: np.ndarray
    gallery_embeddings: np.ndarray
    gallery_ids: np.ndarray

    def __post_init__(self):
        self.query_embeddings = np.asarray(self.query_embeddings, dtype=float)
        self.gallery_embeddings = np.asarray(self.gallery_embeddings, dtype=float)
        self.query_ids = np.asarray(self.query_ids)
        self.gallery_ids = np.asarray(self.gallery_ids)
        if len(self.query_embeddings) != len(self.query_ids):
            raise ShapeError("query embeddings and ids must have the same length")
        if len(self.gallery_embeddings) != len(self.gallery_ids):
            raise ShapeError("gallery embeddings and ids must have the same length")
        if len(self.query_embeddings) == 0 or len(self.gallery_embeddings) == 0:
            raise ShapeError("query and gallery must both be nonempty")


@dataclass
class MetricsReport:
    """Evaluation summary for one retrieval split.

    ``cmc[k - 1]`` is the fraction of scored queries with a correct match in
    the top k. ``fscore`` is attached later by pipelines that know the
    pseudo-label partition; it stays None here. ``excluded`` counts queries
    whose identity is absent from the gallery.
    """

    map: float
    cmc: np.ndarray
    fscore: float | None = None
    excluded: int = 0

    def rank(self, k: int) -> float:
        """CMC at rank k, clamped to the last column for short galleries."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def evaluate(split: RetrievalSplit, max_rank: int | None = None) -> MetricsReport:
    """Score a retrieval split.

    For each query the gallery is sorted by distance (stable, so equal
    distances keep gallery order). Average precision is the mean over match
    positions of (matches so far / rank); CMC accumulates first-match ranks.

    Raises:
        ShapeError: when every query identity is missing from the gallery.
    """
    gallery_size = len(split.gallery_embeddings)
    if max_rank is None or max_rank > gallery_size:
        max_rank = gallery_size

    diff = split.query_embeddings[:, None, :] - split.gallery_embeddings[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))

    aps = []
    cmc_hits = np.zeros(max_rank)
    excluded = 0
    for q in range(len(split.query_embeddings)):
        order = np.argsort(dist[q], kind="stable")
        matches = split.gallery_ids[order] == split.query_ids[q]
        total = int(matches.sum())
        if total == 0:
            excluded += 1
            continue
        ranks = np.flatnonzero(matches) + 1
        precision_at_match = np.arange(1, total + 1) / ranks
        aps.append(np.mean(precision_at_match))
        first = ranks[0]
        if first <= max_rank:
            cmc_hits[first - 1 :] += 1.0

    scored = len(aps)
    if scored == 0:
        raise ShapeError("no query identity appears in the gallery")
    return MetricsReport(
        map=float(np.mean(aps)),
        cmc=cmc_hits / scored,
        excluded=excluded,
    )
