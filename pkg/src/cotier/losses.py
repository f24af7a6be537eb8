"""Batch-hard triplet loss and identity-balanced batch sampling.

The loss follows the hard-mining scheme: for every anchor use its farthest
same-label embedding and nearest different-label embedding, hinge at a fixed
margin, and average over anchors. Gradients with respect to the embeddings
are computed analytically so they can be pushed through the encoder exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientIdentitiesError, NoNegativesError, ShapeError

DEFAULT_MARGIN = 0.5


def pairwise_distances(embeddings: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Euclidean distance matrix between embedding rows.

    Computed chunk-by-chunk from explicit row differences, which matches a
    direct sqrt(sum((a - b)^2)) evaluation bit for bit. The result is
    symmetric with a zero diagonal.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d embedding matrix, got shape {x.shape}")
    n = len(x)
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        out[start:stop] = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(out, 0.0)
    return out


@dataclass
class PKBatch:
    """A batch of p distinct labels with k instances each.

    Attributes:
        inputs: Stacked sample rows, shape (p * k, dim).
        labels: Label per row.
        indices: Position of each row in the source dataset.
        p: Number of distinct labels.
        k: Instances per label.
    """

    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    p: int
    k: int

    def __post_init__(self):
        if len(self.inputs) != self.p * self.k or len(self.labels) != self.p * self.k:
            raise ShapeError("batch size does not equal p * k")
        if len(np.unique(self.labels)) != self.p:
            raise ShapeError("batch does not contain exactly p distinct labels")


def sample_pk_batch(
    inputs: np.ndarray,
    labels: np.ndarray,
    p: int,
    k: int,
    rng: np.random.Generator,
) -> PKBatch:
    """Sample p labels without replacement and k instances per label.

    Labels with fewer than k instances are sampled with replacement.

    Raises:
        InsufficientIdentitiesError: when fewer than p distinct labels exist.
    """
    inputs = np.asarray(inputs, dtype=float)
    labels = np.asarray(labels)
    if len(inputs) != len(labels):
        raise ShapeError("inputs and labels must have the same length")
    distinct = np.unique(labels)
    if len(distinct) < p:
        raise InsufficientIdentitiesError(
            f"need {p} distinct labels, dataset has {len(distinct)}"
        )
    chosen = rng.choice(distinct, size=p, replace=False)
    picked = []
    for label in chosen:
        members = np.flatnonzero(labels == label)
        replace = len(members) < k
        picked.append(rng.choice(members, size=k, replace=replace))
    indices = np.concatenate(picked)
    return PKBatch(inputs[indices], labels[indices], indices, p, k)


@dataclass
class TripletLossResult:
    """Loss value plus everything needed to backpropagate.

    ``per_anchor_loss`` holds one entry per scored anchor (anchors whose
    label appears only once are skipped); ``anchor_indices`` maps those
    entries back to embedding rows. ``upstream_grads`` is the exact gradient
    of ``loss`` with respect to every embedding row.
    """

    loss: float
    per_anchor_loss: np.ndarray
    anchor_indices: np.ndarray
    upstream_grads: np.ndarray


def triplet_loss_batch_hard(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float = DEFAULT_MARGIN,
) -> TripletLossResult:
    """Batch-hard triplet loss with analytic embedding gradients.

    For each anchor a: loss_a = max(d(a, hardest positive) -
    d(a, nearest negative) + margin, 0). Hard pairs are chosen per anchor;
    ties resolve to the lowest row index. The total loss is the mean over
    scored anchors, and the hinge contributes zero gradient at exactly zero.

    Raises:
        NoNegativesError: when the batch holds a single distinct label.
    """
    emb = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    if emb.ndim != 2:
        raise ShapeError(f"expected a 2-d embedding matrix, got shape {emb.shape}")
    if len(emb) != len(labels):
        raise ShapeError("embeddings and labels must have the same length")
    if len(np.unique(labels)) < 2:
        raise NoNegativesError("batch holds a single distinct label")

    n = len(emb)
    dist = pairwise_distances(emb)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same

    grads = np.zeros_like(emb)
    anchor_indices = []
    anchor_losses = []
    # First pass: find scored anchors so the 1/count factor is known.
    scored = np.flatnonzero(pos_mask.any(axis=1))
    if len(scored) == 0:
        return TripletLossResult(0.0, np.empty(0), np.empty(0, dtype=int), grads)
    share = 1.0 / len(scored)

    for a in scored:
        hardest_pos = int(np.argmax(np.where(pos_mask[a], dist[a], -np.inf)))
        nearest_neg = int(np.argmin(np.where(neg_mask[a], dist[a], np.inf)))
        d_ap = dist[a, hardest_pos]
        d_an = dist[a, nearest_neg]
        hinge = d_ap - d_an + margin
        anchor_indices.append(a)
        anchor_losses.append(max(hinge, 0.0))
        if hinge > 0.0:
            if d_ap > 0.0:
                direction = (emb[a] - emb[hardest_pos]) / d_ap
                grads[a] += share * direction
                grads[hardest_pos] -= share * direction
            if d_an > 0.0:
                direction = (emb[a] - emb[nearest_neg]) / d_an
                grads[a] -= share * direction
                grads[nearest_neg] += share * direction

    per_anchor = np.array(anchor_losses)
    return TripletLossResult(
        loss=float(np.mean(per_anchor)),
        per_anchor_loss=per_anchor,
        anchor_indices=np.array(anchor_indices, dtype=int),
        upstream_grads=grads,
    )
