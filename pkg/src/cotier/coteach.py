"""Teacher-student co-teaching over confidence tiers, with mean teaching.

One teacher and n - 1 students all start from the same adapted encoder. For
each student (most noise-tolerant tier first) the pair alternates for up to
``rounds`` rounds: on odd rounds the teacher picks reliable samples from the
most-trusted tier and the student trains on them; on even rounds the student
picks reliable samples from its own tier and the teacher trains on those.
Each model keeps a temporally averaged copy of itself (mean teaching): after
every gradient step the average moves by ``avg = alpha * avg + (1 - alpha) *
live``. Averages drive sample selection and validation scoring when mean
teaching is on; disabling it uses live parameters everywhere.

The best teacher snapshot by validation mAP is tracked across all rounds and
paradigms and returned at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .encoder import EncoderParams, backward, embed_batch, sgd_step
from .errors import ConfigError, ShapeError
from .evalmetrics import RetrievalSplit, evaluate
from .losses import sample_pk_batch, triplet_loss_batch_hard

logger = logging.getLogger(__name__)

UNLABELED = -1


@dataclass
class MeanTeacherState:
    """Temporally averaged copy of a live model.

    ``iteration`` counts updates; at zero the average equals the live
    parameters it was initialized from.
    """

    avg_params: EncoderParams
    alpha: float
    iteration: int = 0

    @staticmethod
    def init(params: EncoderParams, alpha: float) -> "MeanTeacherState":
        if not 0.0 <= alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {alpha}")
        return MeanTeacherState(params.copy(), alpha, 0)


def ema_update(state: MeanTeacherState, current: EncoderParams) -> MeanTeacherState:
    """One exponential-moving-average step toward the live parameters.

    Every averaged entry is a convex combination, so it always stays inside
    the interval spanned by the values it has averaged.
    """
    if state.avg_params.layer_dims != current.layer_dims:
        raise ShapeError(
            f"averaged and live layer dims differ: {state.avg_params.layer_dims} vs {current.layer_dims}"
        )
    a = state.alpha
    new_w = [a * avg + (1.0 - a) * live for avg, live in zip(state.avg_params.weights, current.weights)]
    new_b = [a * avg + (1.0 - a) * live for avg, live in zip(state.avg_params.biases, current.biases)]
    avg = EncoderParams(list(current.layer_dims), new_w, new_b, current.normalize)
    return MeanTeacherState(avg, a, state.iteration + 1)


@dataclass
class TierView:
    """Label-stripped slice of the target training set.

    ``labels`` are pseudo labels from the partition (UNLABELED where the
    partition never admitted the sample to a cluster); true identities are
    deliberately absent from this type.
    """

    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.inputs) == len(self.labels)):
            raise ShapeError("tier fields must share their length")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class ReliableSelection:
    """Outcome of small-loss selection on one tier.

    ``labels`` mirror the tier's pseudo labels except for unlabeled samples,
    which adopt the label of the reference centroid that scored them.
    ``fallback`` is True when centroid-distance scoring replaced loss
    scoring.
    """

    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    fallback: bool


def _centroids(embeddings: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids = np.unique(labels[labels != UNLABELED])
    centers = np.stack([embeddings[labels == i].mean(axis=0) for i in ids]) if len(ids) else np.empty((0, embeddings.shape[1]))
    return centers, ids


def select_reliable(
    model: EncoderParams,
    tier: TierView,
    keep_rate: float,
    margin: float = 0.5,
    reference: TierView | None = None,
) -> ReliableSelection:
    """Keep the ceil(keep_rate * len(tier)) samples with the smallest loss.

    Each labeled sample is scored by a triplet-style loss under ``model``
    over the whole tier: its mean distance to same-label samples minus its
    distance to the nearest different-label sample, plus the margin. Smaller
    means more reliable. Samples that cannot be loss-scored (singleton or
    missing labels) rank by distance to the nearest pseudo-label centroid of
    the reference set instead; when the whole tier lacks repeated labels the
    selection falls back to centroid distances outright (flagged and
    logged). Ties resolve to the lowest sample index.

    Args:
        model: Parameters used to embed the tier (the averaged model when
            mean teaching is on).
        tier: Samples to select from; must be nonempty.
        keep_rate: Fraction to keep, in (0, 1].
        margin: Constant added to loss scores for interpretability.
        reference: Labeled samples whose centroids anchor fallback scoring;
            defaults to the tier itself.
    """
    if len(tier) == 0:
        raise ShapeError("cannot select from an empty tier")
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    reference = reference if reference is not None else tier

    emb = embed_batch(model, tier.inputs)
    labels = tier.labels
    counts = {int(l): int(c) for l, c in zip(*np.unique(labels[labels != UNLABELED], return_counts=True))}
    scorable = np.array([l != UNLABELED and counts.get(int(l), 0) >= 2 for l in labels])
    multi_label = len([l for l in counts if counts[l] >= 2]) >= 1 and len(counts) >= 2
    loss_mode = bool(scorable.any()) and multi_label

    scores = np.full(len(tier), np.inf)
    adopted = labels.copy()
    fallback = not loss_mode

    if loss_mode:
        diff = emb[:, None, :] - emb[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        same = labels[:, None] == labels[None, :]
        np.fill_diagonal(same, False)
        other = (labels[:, None] != labels[None, :]) & (labels[None, :] != UNLABELED)
        for a in np.flatnonzero(scorable):
            positives = np.flatnonzero(same[a])
            negatives = np.flatnonzero(other[a])
            if len(negatives) == 0:
                continue
            scores[a] = dist[a, positives].mean() - dist[a, negatives].min() + margin

    needs_fallback = ~np.isfinite(scores)
    if needs_fallback.any():
        ref_emb = embed_batch(model, reference.inputs)
        centers, center_labels = _centroids(ref_emb, reference.labels)
        if len(centers) == 0:
            # No labeled anchor anywhere: keep deterministic order by index.
            scores[needs_fallback] = 0.0
        else:
            rows = np.flatnonzero(needs_fallback)
            d = np.sqrt(np.sum((emb[rows, None, :] - centers[None, :, :]) ** 2, axis=2))
            nearest = np.argmin(d, axis=1)
            scores[rows] = d[np.arange(len(rows)), nearest]
            unlabeled = rows[labels[rows] == UNLABELED]
            adopted[unlabeled] = center_labels[nearest[labels[rows] == UNLABELED]]
        if fallback:
            logger.info(
                "tier has no repeated pseudo label; selection fell back to centroid distances"
            )

    keep = int(np.ceil(keep_rate * len(tier)))
    order = np.lexsort((tier.indices, scores))
    chosen = np.sort(order[:keep])
    return ReliableSelection(
        indices=tier.indices[chosen],
        inputs=tier.inputs[chosen],
        labels=adopted[chosen],
        scores=scores[chosen],
        fallback=fallback,
    )


@dataclass
class ModelState:
    """A live model plus its temporal average (None when mean teaching is off)."""

    name: str
    params: EncoderParams
    ema: MeanTeacherState | None = None

    def eval_params(self) -> EncoderParams:
        """Parameters used for selection and scoring."""
        return self.ema.avg_params if self.ema is not None else self.params


@dataclass
class BestSnapshot:
    """Deep copy of the teacher at its best validation score so far."""

    params: EncoderParams
    ema_params: EncoderParams | None
    score: float
    paradigm: int
    round: int


@dataclass
class RoundLog:
    """One row of the per-round training log."""

    paradigm: int
    round: int
    active_model: str
    selected_count: int
    mean_loss: float
    teacher_val_map: float
    ema_teacher_val_map: float


@dataclass
class ValidationProbe:
    """Held-out labeled slice used only to score candidate models."""

    query_inputs: np.ndarray
    query_ids: np.ndarray
    gallery_inputs: np.ndarray
    gallery_ids: np.ndarray

    def score(self, params: EncoderParams) -> float:
        split = RetrievalSplit(
            query_embeddings=embed_batch(params, self.query_inputs),
            query_ids=self.query_ids,
            gallery_embeddings=embed_batch(params, self.gallery_inputs),
            gallery_ids=self.gallery_ids,
        )
        return evaluate(split).map


def _train_rounds_worth(
    state: ModelState,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> list[float]:
    """Run one round of gradient steps on the given sample pool."""
    usable = labels != UNLABELED
    inputs = inputs[usable]
    labels = labels[usable]
    distinct = np.unique(labels)
    p_eff = min(cfg.p, len(distinct))
    if p_eff < 2:
        logger.info("training pool holds %d usable labels; skipping this round's steps", len(distinct))
        return []
    losses = []
    for _ in range(cfg.steps_per_round):
        batch = sample_pk_batch(inputs, labels, p_eff, cfg.k, rng)
        emb = embed_batch(state.params, batch.inputs)
        result = triplet_loss_batch_hard(emb, batch.labels, cfg.margin)
        upstream = result.upstream_grads
        if state.ema is not None and cfg.consistency_weight > 0.0:
            # Averaged model supervises the live one: pull each embedding
            # toward where the temporal average puts the same input.
            anchors = embed_batch(state.ema.avg_params, batch.inputs)
            upstream = upstream + cfg.consistency_weight * (emb - anchors) / len(emb)
        grads = backward(state.params, batch.inputs, upstream)
        state.params = sgd_step(state.params, grads, cfg.learning_rate)
        if state.ema is not None:
            state.ema = ema_update(state.ema, state.params)
        losses.append(result.loss)
    return losses


def _snapshot(teacher: ModelState, score: float, paradigm: int, round_index: int) -> BestSnapshot:
    return BestSnapshot(
        params=teacher.params.copy(),
        ema_params=teacher.ema.avg_params.copy() if teacher.ema is not None else None,
        score=score,
        paradigm=paradigm,
        round=round_index,
    )


def run_paradigm(
    teacher: ModelState,
    student: ModelState,
    student_tier: int,
    tiers: list[TierView],
    reference: TierView,
    probe: ValidationProbe,
    cfg: RunConfig,
    rng: np.random.Generator,
    log: list[RoundLog],
    best: BestSnapshot | None = None,
) -> BestSnapshot:
    """Alternate teacher and student for up to ``cfg.rounds`` rounds.

    Odd rounds: the teacher selects from the most-trusted tier and the
    student trains on the picked instances. Even rounds: the student selects
    from its own tier (``tiers[student_tier - 1]``) and the teacher trains on
    exactly those instances, so everything the teacher learns in a paradigm
    is mined by its current student. The teacher's validation mAP (averaged
    model when mean teaching is on) is logged every round; the best snapshot
    is updated on strict improvement and the paradigm stops early after
    ``cfg.early_stop_patience`` rounds without one.

    Args:
        student_tier: 1-based tier index of the student, between 2 and n.
        best: Carry-over snapshot from earlier paradigms, if any.

    Returns:
        The best snapshot seen up to and including this paradigm.
    """
    if not 2 <= student_tier <= len(tiers):
        raise ConfigError(f"student tier must lie in [2, {len(tiers)}], got {student_tier}")
    mean_teaching = teacher.ema is not None

    if best is None:
        best = _snapshot(teacher, probe.score(teacher.eval_params()), student_tier, 0)
    stale = 0
    for round_index in range(1, cfg.rounds + 1):
        if round_index % 2 == 0:
            selector, tier, active = student, tiers[student_tier - 1], teacher
        else:
            selector, tier, active = teacher, tiers[0], student

        losses: list[float] = []
        selected = 0
        if len(tier) > 0:
            selector_params = selector.eval_params() if cfg.selection_uses_ema else selector.params
            selection = select_reliable(selector_params, tier, cfg.keep_rate, cfg.margin, reference)
            selected = len(selection.indices)
            losses = _train_rounds_worth(active, selection.inputs, selection.labels, cfg, rng)
        else:
            logger.info("tier %d is empty; round %d trains nothing", student_tier, round_index)

        live_map = probe.score(teacher.params)
        ema_map = probe.score(teacher.ema.avg_params) if mean_teaching else live_map
        log.append(
            RoundLog(
                paradigm=student_tier,
                round=round_index,
                active_model=active.name,
                selected_count=selected,
                mean_loss=float(np.mean(losses)) if losses else float("nan"),
                teacher_val_map=live_map,
                ema_teacher_val_map=ema_map,
            )
        )
        score = ema_map if mean_teaching else live_map
        if score > best.score:
            best = _snapshot(teacher, score, student_tier, round_index)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                logger.info(
                    "paradigm %d stopped after round %d (%d rounds without improvement)",
                    student_tier,
                    round_index,
                    stale,
                )
                break
    return best


def run_mcn(
    models: list[ModelState],
    tiers: list[TierView],
    reference: TierView,
    probe: ValidationProbe,
    cfg: RunConfig,
    rng: np.random.Generator,
    log: list[RoundLog] | None = None,
    repartition_fn=None,
) -> tuple[BestSnapshot, list[RoundLog]]:
    """Run every co-teaching paradigm and return the globally best teacher.

    ``models[0]`` is the teacher; students are visited from the last tier
    down to tier 2. At each paradigm boundary the teacher's live weights are
    consolidated to its temporal average when mean teaching is on: within a
    paradigm the live weights are a transient the averaged model smooths
    over, so the average is what the next paradigm should start from. When
    ``repartition_fn`` is given (the optional re-partition switch), it is
    called with the teacher's current evaluation parameters before each
    later paradigm and must return fresh ``(tiers, reference)``.
    """
    if len(models) != len(tiers):
        raise ConfigError(f"need one model per tier, got {len(models)} models for {len(tiers)} tiers")
    if len(models) < 2:
        raise ConfigError("co-teaching needs at least one student (n >= 2)")
    log = log if log is not None else []

    teacher = models[0]
    best: BestSnapshot | None = None
    for student_tier in range(len(models), 1, -1):
        if student_tier != len(models):
            if teacher.ema is not None:
                teacher.params = teacher.ema.avg_params.copy()
            if repartition_fn is not None:
                tiers, reference = repartition_fn(teacher.eval_params())
        best = run_paradigm(
            teacher,
            models[student_tier - 1],
            student_tier,
            tiers,
            reference,
            probe,
            cfg,
            rng,
            log,
            best,
        )
    assert best is not None
    return best, log
