"""Density clustering and the confidence-tier partition built from it.

``dbscan`` is a plain exact implementation (full pairwise distance scan, no
spatial index): points with at least ``min_pts`` neighbors within ``eps``
(counting themselves) are cores, clusters are the eps-connected components of
cores, and each remaining point joins the cluster of its nearest core within
eps or stays an outlier. Clusters that end up smaller than ``min_pts`` are
dissolved back to outliers. Assigning border points by nearest core makes the
result independent of input order, up to cluster relabeling.

``partition_granularity`` peels a sample set into n confidence tiers by
repeated clustering with a shrinking radius: outliers of the first pass form
the least-trusted tier, outliers of each tighter pass form the next tier up,
and the points that survive every pass form the most-trusted tier.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, embed_batch
from .errors import ConfigError, NumericError, ShapeError
from .losses import pairwise_distances

logger = logging.getLogger(__name__)

OUTLIER = -1

# Density radius tuned for raw high-dimensional feature vectors. Kept as a
# documented preset; embeddings normalized to the unit sphere want a radius
# derived from their own distance distribution instead (see EpsSchedule).
RAW_FEATURE_EPS = 1.6e-3
DEFAULT_MIN_PTS = 4


@dataclass
class ClusterResult:
    """Cluster assignment per input row; ``OUTLIER`` (-1) marks noise.

    Cluster ids are contiguous from 0 in order of first appearance, and every
    cluster holds at least ``min_pts`` members.
    """

    assignments: np.ndarray
    cluster_count: int
    eps: float
    min_pts: int

    def outliers(self) -> np.ndarray:
        return np.flatnonzero(self.assignments == OUTLIER)

    def inliers(self) -> np.ndarray:
        return np.flatnonzero(self.assignments != OUTLIER)


def dbscan(embeddings: np.ndarray, eps: float = RAW_FEATURE_EPS, min_pts: int = DEFAULT_MIN_PTS) -> ClusterResult:
    """Exact density clustering over a full pairwise-distance scan.

    Args:
        embeddings: Matrix of points, shape (n, dim). May be empty.
        eps: Neighborhood radius (inclusive).
        min_pts: Minimum neighbor count (self included) for a core point,
            and the minimum surviving cluster size.

    Raises:
        ConfigError: for eps <= 0 or min_pts < 1.
        NumericError: for non-finite input values.
    """
    x = np.asarray(embeddings, dtype=float)
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ConfigError(f"min_pts must be at least 1, got {min_pts}")
    if x.size and not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in clustering input")
    n = len(x)
    if n == 0:
        return ClusterResult(np.empty(0, dtype=int), 0, eps, min_pts)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d point matrix, got shape {x.shape}")

    dist = pairwise_distances(x)
    within = dist <= eps
    core = within.sum(axis=1) >= min_pts

    labels = np.full(n, OUTLIER, dtype=int)
    cluster_count = 0
    core_ids = np.flatnonzero(core)
    for seed in core_ids:
        if labels[seed] != OUTLIER:
            continue
        labels[seed] = cluster_count
        frontier = [seed]
        while frontier:
            point = frontier.pop()
            for neighbor in np.flatnonzero(within[point] & core):
                if labels[neighbor] == OUTLIER:
                    labels[neighbor] = cluster_count
                    frontier.append(neighbor)
        cluster_count += 1

    # Border points: nearest core within eps, independent of input order.
    for point in np.flatnonzero(~core):
        candidates = np.flatnonzero(within[point] & core)
        if len(candidates):
            nearest = candidates[np.argmin(dist[point, candidates])]
            labels[point] = labels[nearest]

    # Dissolve clusters that lost too many members to border reassignment.
    ids, counts = np.unique(labels[labels != OUTLIER], return_counts=True)
    for cluster_id in ids[counts < min_pts]:
        labels[labels == cluster_id] = OUTLIER

    labels = _relabel(labels)
    surviving = labels[labels != OUTLIER]
    count = int(surviving.max()) + 1 if len(surviving) else 0
    return ClusterResult(labels, count, eps, min_pts)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Renumber cluster ids to 0..k-1 in order of first appearance."""
    out = np.full(len(labels), OUTLIER, dtype=int)
    mapping: dict[int, int] = {}
    for i, label in enumerate(labels):
        if label == OUTLIER:
            continue
        if label not in mapping:
            mapping[label] = len(mapping)
        out[i] = mapping[label]
    return out


@dataclass
class EpsSchedule:
    """Geometric radius schedule for the peeling rounds.

    Round r uses ``base * decay ** (r - 1)``. When ``base`` is None it is
    derived from the data as the ``percentile``-th percentile of all pairwise
    embedding distances, so the schedule adapts to the embedding scale.
    """

    base: float | None = None
    decay: float = 0.75
    percentile: float = 5.0

    def resolve_base(self, embeddings: np.ndarray) -> float:
        if self.base is not None:
            return self.base
        dist = pairwise_distances(embeddings)
        upper = dist[np.triu_indices(len(dist), k=1)]
        if len(upper) == 0:
            raise ShapeError("cannot derive a radius from fewer than two points")
        value = float(np.percentile(upper, self.percentile))
        if value <= 0.0:
            # Duplicate-heavy data can drive the percentile to zero.
            positive = upper[upper > 0.0]
            value = float(positive.min()) if len(positive) else 1.0
        return value

    def eps_for_round(self, round_index: int, base: float) -> float:
        return base * self.decay ** (round_index - 1)


@dataclass
class GranularityPartition:
    """Confidence tiers of a sample set, most trusted first.

    Attributes:
        tiers: tiers[0] is the most-trusted tier T1, tiers[-1] the
            least-trusted tier Tn; entries are index arrays into the sample
            set. Tiers are disjoint and cover every sample.
        n: Number of tiers.
        pseudo_labels: Label per sample from the clustering round that last
            admitted it; -1 for the least-trusted tier, whose members were
            never admitted to any cluster. Labels from different rounds never
            collide.
        eps_schedule: Radius used by each peeling round.
    """

    tiers: list[np.ndarray]
    n: int
    pseudo_labels: np.ndarray
    eps_schedule: list[float] = field(default_factory=list)

    def labeled_indices(self) -> np.ndarray:
        """Samples in tiers T1..T(n-1), i.e. everything with a pseudo label."""
        return np.flatnonzero(self.pseudo_labels != OUTLIER)


def partition_granularity(
    inputs: np.ndarray,
    model: EncoderParams,
    n: int,
    schedule: EpsSchedule | None = None,
    min_pts: int = DEFAULT_MIN_PTS,
) -> GranularityPartition:
    """Split samples into n confidence tiers by recursive density peeling.

    Round 1 clusters every embedded sample; its outliers become the
    least-trusted tier. Each later round reclusters the surviving inliers at
    a tighter radius and peels its outliers into the next tier up. Samples
    that survive all n - 1 rounds form the most-trusted tier and keep the
    final round's cluster labels; peeled samples keep their labels from the
    last round that admitted them.

    Args:
        inputs: Raw sample rows (labels are never seen here).
        model: Encoder used to embed the samples once, up front.
        n: Number of tiers, >= 2.
        schedule: Radius schedule; defaults to the percentile-derived base.
        min_pts: Density threshold passed through to every round.
    """
    if n < 2:
        raise ConfigError(f"granularity n must be at least 2, got {n}")
    inputs = np.asarray(inputs, dtype=float)
    if len(inputs) == 0:
        raise ShapeError("cannot partition an empty sample set")
    schedule = schedule or EpsSchedule()

    emb = embed_batch(model, inputs)
    base = schedule.resolve_base(emb)

    total = len(inputs)
    pseudo = np.full(total, OUTLIER, dtype=int)
    tiers: list[np.ndarray] = [np.empty(0, dtype=int)] * n
    remaining = np.arange(total)
    next_label = 0
    eps_used: list[float] = []

    for round_index in range(1, n):
        eps = schedule.eps_for_round(round_index, base)
        eps_used.append(eps)
        if len(remaining) == 0:
            logger.info("peeling round %d found no samples left; tier stays empty", round_index)
            tiers[n - round_index] = np.empty(0, dtype=int)
            continue
        result = dbscan(emb[remaining], eps=eps, min_pts=min_pts)
        out_mask = result.assignments == OUTLIER
        peeled = remaining[out_mask]
        kept = remaining[~out_mask]
        # Survivors get this round's labels; earlier labels are superseded.
        pseudo[kept] = next_label + result.assignments[~out_mask]
        next_label += result.cluster_count
        tiers[n - round_index] = peeled
        remaining = kept

    tiers[0] = remaining
    return GranularityPartition(tiers, n, _relabel(pseudo), eps_used)


def pairwise_fscore(pseudo_labels: np.ndarray, true_labels: np.ndarray) -> float:
    """Pairwise F-score of a clustering against ground-truth identities.

    Both precision and recall run over unordered pairs of samples that hold a
    pseudo label (outliers are excluded from the pair universe entirely):
    precision is the fraction of same-cluster pairs that share an identity,
    recall the fraction of same-identity pairs that share a cluster. Returns
    0.0 when either denominator is zero.
    """
    pseudo = np.asarray(pseudo_labels)
    truth = np.asarray(true_labels)
    if pseudo.shape != truth.shape:
        raise ShapeError("pseudo and true labels must have the same length")
    keep = pseudo != OUTLIER
    pseudo = pseudo[keep]
    truth = truth[keep]

    def pair_count(counts: np.ndarray) -> float:
        return float(np.sum(counts * (counts - 1) // 2))

    _, cluster_counts = np.unique(pseudo, return_counts=True)
    _, identity_counts = np.unique(truth, return_counts=True)
    joint = {}
    for c, t in zip(pseudo, truth):
        joint[(c, t)] = joint.get((c, t), 0) + 1
    joint_counts = np.array(list(joint.values())) if joint else np.empty(0)

    same_cluster = pair_count(cluster_counts)
    same_identity = pair_count(identity_counts)
    same_both = pair_count(joint_counts) if len(joint_counts) else 0.0
    if same_cluster == 0.0 or same_identity == 0.0:
        return 0.0
    precision = same_both / same_cluster
    recall = same_both / same_identity
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def average_fscore(partition: GranularityPartition, true_labels: np.ndarray) -> float:
    """Unweighted mean of per-tier pairwise F-scores.

    Only tiers that hold pseudo labels (T1..T(n-1)) enter the mean; empty
    tiers are skipped.
    """
    truth = np.asarray(true_labels)
    if truth.shape != partition.pseudo_labels.shape:
        raise ShapeError("true labels must align with the partitioned samples")
    scores = []
    for tier in partition.tiers[:-1]:
        if len(tier) == 0:
            continue
        scores.append(pairwise_fscore(partition.pseudo_labels[tier], truth[tier]))
    return float(np.mean(scores)) if scores else 0.0


def partition_to_dict(partition: GranularityPartition) -> dict:
    return {
        "n": partition.n,
        "eps_schedule": list(partition.eps_schedule),
        "tiers": [tier.tolist() for tier in partition.tiers],
        "pseudo_labels": partition.pseudo_labels.tolist(),
    }


def partition_from_dict(payload: dict) -> GranularityPartition:
    return GranularityPartition(
        tiers=[np.asarray(t, dtype=int) for t in payload["tiers"]],
        n=int(payload["n"]),
        pseudo_labels=np.asarray(payload["pseudo_labels"], dtype=int),
        eps_schedule=[float(e) for e in payload["eps_schedule"]],
    )


def save_partition(partition: GranularityPartition, path) -> None:
    with open(path, "w") as fh:
        json.dump(partition_to_dict(partition), fh)


def load_partition(path) -> GranularityPartition:
    with open(path) as fh:
        return partition_from_dict(json.load(fh))
