"""End-to-end adaptation pipeline and the experiment runner.

Stages: train a source encoder on labeled source data, partition the
label-stripped target training split into confidence tiers with that encoder,
fine-tune on the pseudo-labeled tiers, then co-teach teacher and students over
the tiers with and without mean teaching. Held-out target labels are only
ever touched by evaluation code: training stages receive a ``TrainView`` that
simply has no identity field.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    EpsSchedule,
    GranularityPartition,
    average_fscore,
    partition_granularity,
)
from .config import RunConfig
from .coteach import (
    BestSnapshot,
    MeanTeacherState,
    ModelState,
    RoundLog,
    TierView,
    ValidationProbe,
    run_mcn,
)
from .encoder import EncoderParams, backward, embed_batch, init_params, sgd_step
from .errors import ConfigError, InsufficientIdentitiesError, ShapeError
from .evalmetrics import MetricsReport, RetrievalSplit, evaluate
from .losses import sample_pk_batch, triplet_loss_batch_hard
from .rng import stream
from .synthdata import SyntheticDataset, make_benchmark

logger = logging.getLogger(__name__)

HIDDEN_DIMS = (32, 32)
EMBEDDING_DIM = 16

VARIANTS = ("direct-transfer", "fine-tune", "mcn", "mcn-mt")


@dataclass
class TrainView:
    """Label-stripped training slice: inputs plus dataset positions only."""

    indices: np.ndarray
    inputs: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def make_train_view(dataset: SyntheticDataset) -> TrainView:
    idx = dataset.splits["train"]
    return TrainView(indices=idx, inputs=dataset.vectors[idx])


def make_probe(dataset: SyntheticDataset, which: str = "val") -> ValidationProbe:
    """Build the measurement-only probe for the named evaluation split."""
    if which == "val":
        q, g = dataset.splits["val_query"], dataset.splits["val_gallery"]
    elif which == "test":
        q, g = dataset.splits["query"], dataset.splits["gallery"]
    else:
        raise ConfigError(f"unknown evaluation split {which!r}")
    if len(q) == 0 or len(g) == 0:
        raise ShapeError(f"dataset has no {which} split")
    return ValidationProbe(
        query_inputs=dataset.vectors[q],
        query_ids=dataset.identities[q],
        gallery_inputs=dataset.vectors[g],
        gallery_ids=dataset.identities[g],
    )


def evaluate_checkpoint(params: EncoderParams, dataset: SyntheticDataset, which: str = "test") -> MetricsReport:
    probe = make_probe(dataset, which)
    split = RetrievalSplit(
        query_embeddings=embed_batch(params, probe.query_inputs),
        query_ids=probe.query_ids,
        gallery_embeddings=embed_batch(params, probe.gallery_inputs),
        gallery_ids=probe.gallery_ids,
    )
    return evaluate(split)


def _train_triplet(
    params: EncoderParams,
    inputs: np.ndarray,
    labels: np.ndarray,
    steps: int,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> EncoderParams:
    """Shared training loop for the source and fine-tune stages."""
    distinct = np.unique(labels)
    if len(distinct) < 2:
        raise InsufficientIdentitiesError(
            f"training needs at least 2 labels, got {len(distinct)}"
        )
    p_eff = min(cfg.p, len(distinct))
    for _ in range(steps):
        batch = sample_pk_batch(inputs, labels, p_eff, cfg.k, rng)
        emb = embed_batch(params, batch.inputs)
        result = triplet_loss_batch_hard(emb, batch.labels, cfg.margin)
        grads = backward(params, batch.inputs, result.upstream_grads)
        params = sgd_step(params, grads, cfg.learning_rate)
    return params


def train_source(dataset: SyntheticDataset, cfg: RunConfig) -> EncoderParams:
    """Train a fresh encoder on the labeled source training split."""
    idx = dataset.splits["train"]
    layer_dims = [dataset.spec.input_dim, *HIDDEN_DIMS, EMBEDDING_DIM]
    params = init_params(layer_dims, stream(cfg.seed, "source", "init"))
    return _train_triplet(
        params,
        dataset.vectors[idx],
        dataset.identities[idx],
        cfg.source_steps,
        cfg,
        stream(cfg.seed, "source", "batches"),
    )


def build_partition(view: TrainView, params: EncoderParams, cfg: RunConfig) -> GranularityPartition:
    schedule = EpsSchedule(base=cfg.eps0, decay=cfg.eps_decay, percentile=cfg.eps_percentile)
    return partition_granularity(view.inputs, params, cfg.n, schedule, cfg.min_pts)


def tier_views(partition: GranularityPartition, view: TrainView) -> list[TierView]:
    """Materialize each tier as a label-stripped view into the training slice."""
    return [
        TierView(indices=tier, inputs=view.inputs[tier], labels=partition.pseudo_labels[tier])
        for tier in partition.tiers
    ]


def reference_view(partition: GranularityPartition, view: TrainView) -> TierView:
    """All pseudo-labeled samples, used as the centroid reference set."""
    labeled = partition.labeled_indices()
    return TierView(
        indices=labeled,
        inputs=view.inputs[labeled],
        labels=partition.pseudo_labels[labeled],
    )


def adapt_finetune(
    params: EncoderParams,
    partition: GranularityPartition,
    view: TrainView,
    cfg: RunConfig,
) -> EncoderParams:
    """Fine-tune the source encoder on every pseudo-labeled tier.

    Uses the union of tiers T1..T(n-1) with their pseudo labels. An empty
    union (everything peeled to the last tier) returns the source parameters
    unchanged, with a warning.
    """
    labeled = partition.labeled_indices()
    labels = partition.pseudo_labels[labeled]
    if len(labeled) == 0 or len(np.unique(labels)) < 2:
        logger.warning("no usable pseudo-labeled tier; fine-tuning skipped")
        return params.copy()
    return _train_triplet(
        params.copy(),
        view.inputs[labeled],
        labels,
        cfg.finetune_steps,
        cfg,
        stream(cfg.seed, "finetune"),
    )


def run_coteach(
    m_ada: EncoderParams,
    partition: GranularityPartition,
    view: TrainView,
    probe: ValidationProbe,
    cfg: RunConfig,
    mean_teaching: bool,
) -> tuple[BestSnapshot, list[RoundLog]]:
    """Co-teach one teacher and n - 1 students seeded from ``m_ada``."""
    models = [
        ModelState(
            name=f"M{i + 1}",
            params=m_ada.copy(),
            ema=MeanTeacherState.init(m_ada, cfg.alpha) if mean_teaching else None,
        )
        for i in range(cfg.n)
    ]
    tiers = tier_views(partition, view)
    reference = reference_view(partition, view)
    rng = stream(cfg.seed, "coteach", "mt" if mean_teaching else "plain")

    repartition_fn = None
    if cfg.repartition:

        def repartition_fn(current_params):
            fresh = build_partition(view, current_params, cfg)
            return tier_views(fresh, view), reference_view(fresh, view)

    return run_mcn(models, tiers, reference, probe, cfg, rng, repartition_fn=repartition_fn)


@dataclass
class ExperimentResult:
    """Everything one experiment run produces.

    ``variants`` maps variant name to its test-split report; ``round_logs``
    holds the per-round training logs of the two co-teaching variants.
    """

    config: RunConfig
    seed: int
    config_hash: str
    variants: dict[str, MetricsReport] = field(default_factory=dict)
    round_logs: dict[str, list[RoundLog]] = field(default_factory=dict)
    tier_sizes: list[int] = field(default_factory=list)
    avg_fscore: float | None = None


def metric_row(variant: str, report: MetricsReport, cfg: RunConfig, config_hash: str) -> dict:
    """Flatten one evaluation into the stable metrics-CSV row shape."""
    return {
        "variant": variant,
        "map": report.map,
        "rank1": report.rank(1),
        "rank5": report.rank(5),
        "rank10": report.rank(10),
        "fscore": report.fscore,
        "excluded": report.excluded,
        "n": cfg.n,
        "seed": cfg.seed,
        "config_hash": config_hash,
    }


def run_experiment(cfg: RunConfig, on_metric=None) -> ExperimentResult:
    """Run the four-variant ablation for one seed.

    Variants in order: direct transfer of the source encoder, fine-tuning on
    pseudo labels, co-teaching without mean teaching, co-teaching with it.
    ``on_metric`` (if given) receives each metric row as soon as the variant
    finishes, so partial results survive a later failure.
    """
    cfg.validate()
    config_hash = cfg.hash()
    result = ExperimentResult(config=cfg, seed=cfg.seed, config_hash=config_hash)

    def emit(variant: str, report: MetricsReport):
        result.variants[variant] = report
        if on_metric is not None:
            on_metric(metric_row(variant, report, cfg, config_hash))

    source, target = make_benchmark(cfg.preset, cfg.seed)
    view = make_train_view(target)
    probe = make_probe(target, "val")

    m_src = train_source(source, cfg)
    emit("direct-transfer", evaluate_checkpoint(m_src, target))

    partition = build_partition(view, m_src, cfg)
    result.tier_sizes = [len(t) for t in partition.tiers]
    truth = target.identities[view.indices]
    result.avg_fscore = average_fscore(partition, truth)

    m_ada = adapt_finetune(m_src, partition, view, cfg)
    finetune_report = evaluate_checkpoint(m_ada, target)
    finetune_report.fscore = result.avg_fscore
    emit("fine-tune", finetune_report)

    best_plain, log_plain = run_coteach(m_ada, partition, view, probe, cfg, mean_teaching=False)
    result.round_logs["mcn"] = log_plain
    mcn_report = evaluate_checkpoint(best_plain.params, target)
    mcn_report.fscore = result.avg_fscore
    emit("mcn", mcn_report)

    best_mt, log_mt = run_coteach(m_ada, partition, view, probe, cfg, mean_teaching=True)
    result.round_logs["mcn-mt"] = log_mt
    assert best_mt.ema_params is not None
    mt_report = evaluate_checkpoint(best_mt.ema_params, target)
    mt_report.fscore = result.avg_fscore
    emit("mcn-mt", mt_report)

    return result


def run_trend(cfg: RunConfig, seeds: list[int], on_metric=None) -> list[ExperimentResult]:
    """Run the ablation over several seeds (for median-based comparisons)."""
    return [run_experiment(cfg.replace(seed=seed), on_metric=on_metric) for seed in seeds]


def median_by_variant(results: list[ExperimentResult]) -> dict[str, float]:
    return {
        variant: float(np.median([r.variants[variant].map for r in results]))
        for variant in VARIANTS
    }


def sweep_granularity(
    cfg: RunConfig,
    n_values: list[int],
    seeds: list[int],
    on_row=None,
) -> list[dict]:
    """MCN-MT mAP and average pseudo-label F-score for each tier count.

    The source encoder and benchmark are reused across ``n_values`` within a
    seed; only the partition and co-teaching stages rerun.
    """
    rows = []
    for seed in seeds:
        seeded = cfg.replace(seed=seed)
        source, target = make_benchmark(seeded.preset, seed)
        view = make_train_view(target)
        probe = make_probe(target, "val")
        m_src = train_source(source, seeded)
        truth = target.identities[view.indices]
        for n in n_values:
            run_cfg = seeded.replace(n=n)
            partition = build_partition(view, m_src, run_cfg)
            m_ada = adapt_finetune(m_src, partition, view, run_cfg)
            best, _ = run_coteach(m_ada, partition, view, probe, run_cfg, mean_teaching=True)
            assert best.ema_params is not None
            report = evaluate_checkpoint(best.ema_params, target)
            row = {
                "n": n,
                "seed": seed,
                "map": report.map,
                "avg_fscore": average_fscore(partition, truth),
                "config_hash": run_cfg.hash(),
            }
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows
