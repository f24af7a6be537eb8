"""Synthetic open-set identity data with a controllable domain shift.

Each identity is a center on the unit sphere. Easy samples scatter
isotropically around their center with a small radius. Hard samples are
displaced along a low-dimensional nuisance subspace drawn once per domain,
with a larger scale: they stay recognizable in principle (the displacement
spans only ``HARD_RANK`` fixed directions a model can learn to discount) but
look like stragglers to any model that has not learned those directions.
Because each domain draws its own nuisance subspace, a model trained on one
domain scatters the other domain's hard samples, which is the main thing
adaptation has to repair besides the global shift. A ``clutter_share`` of the
hard samples is instead displaced in an arbitrary full-dimensional direction
at a comparable norm: clutter carries no learnable structure, and telling it
apart from the recoverable stragglers requires features that have already
absorbed the nuisance directions, not just a distance cut. Target-domain samples
additionally pass through a fixed affine map plus independent noise. Source
and target use disjoint identity id ranges, so nothing about a target
identity is ever seen during source training.

Generation is deterministic: every identity draws from its own child stream
of the spec seed, so per-identity generation could run in any order (or in
parallel) and still produce identical data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import stream

logger = logging.getLogger(__name__)

PRESETS = ("default-shift", "no-shift")

HARD_RANK = 2
"""Dimension of the per-domain nuisance subspace hard samples scatter in."""

BAND_RADIUS = (0.4, 1.2)
"""Displacement range of in-subspace hard samples, in units of the hard sigma."""

CLUTTER_RADIUS = (0.9, 1.3)
"""Displacement range of clutter samples, overlapping the band's far end."""


@dataclass
class DomainTransform:
    """Affine map applied to target-domain samples."""

    matrix: np.ndarray
    offset: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix.T + self.offset

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    @staticmethod
    def from_dict(payload: dict) -> "DomainTransform":
        return DomainTransform(
            matrix=np.asarray(payload["matrix"], dtype=float),
            offset=np.asarray(payload["offset"], dtype=float),
        )


@dataclass
class DomainSpec:
    """Recipe for one domain's synthetic sample set.

    ``first_identity`` offsets the identity ids so two domains can occupy
    disjoint id ranges. ``transform`` and ``noise_sigma`` only apply to
    domains that model a shifted deployment.
    """

    identity_count: int = 30
    samples_per_identity: int = 20
    input_dim: int = 8
    intra_easy_sigma: float = 0.06
    intra_hard_sigma: float = 0.40
    hard_fraction: float = 0.3
    clutter_share: float = 0.0
    noise_sigma: float = 0.0
    transform: DomainTransform | None = None
    first_identity: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.identity_count < 1:
            raise ConfigError("identity_count must be positive")
        if self.samples_per_identity < 1:
            raise ConfigError("samples_per_identity must be positive")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ConfigError("hard_fraction must lie in [0, 1]")
        if not 0.0 <= self.clutter_share <= 1.0:
            raise ConfigError("clutter_share must lie in [0, 1]")
        for name in ("intra_easy_sigma", "intra_hard_sigma", "noise_sigma"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        payload = {
            "identity_count": self.identity_count,
            "samples_per_identity": self.samples_per_identity,
            "input_dim": self.input_dim,
            "intra_easy_sigma": self.intra_easy_sigma,
            "intra_hard_sigma": self.intra_hard_sigma,
            "hard_fraction": self.hard_fraction,
            "clutter_share": self.clutter_share,
            "noise_sigma": self.noise_sigma,
            "transform": self.transform.to_dict() if self.transform else None,
            "first_identity": self.first_identity,
            "seed": self.seed,
        }
        return payload

    @staticmethod
    def from_dict(payload: dict) -> "DomainSpec":
        known = {f for f in DomainSpec.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown DomainSpec keys: {sorted(unknown)}")
        transform = payload.get("transform")
        kwargs = {k: v for k, v in payload.items() if k != "transform"}
        return DomainSpec(
            transform=DomainTransform.from_dict(transform) if transform else None,
            **kwargs,
        )


@dataclass
class SyntheticDataset:
    """Generated samples plus the index sets the pipeline works with.

    ``splits`` maps split names to index arrays: ``train`` feeds every
    training stage (its labels are only ever used for source training and
    for measurement), ``query``/``gallery`` form the test retrieval split and
    ``val_query``/``val_gallery`` the model-selection split. Splits are
    disjoint, and every query identity also appears in the matching gallery.
    """

    spec: DomainSpec
    domain: str
    vectors: np.ndarray
    identities: np.ndarray
    hard: np.ndarray
    clutter: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vectors)


def _split_counts(per_identity: int) -> dict[str, int]:
    """Per-identity allocation: roughly 60% train, the rest evaluation."""
    if per_identity < 5:
        return {"query": 0, "gallery": 0, "val_query": 0, "val_gallery": 0}
    counts = {
        "query": max(1, round(0.10 * per_identity)),
        "gallery": max(1, round(0.15 * per_identity)),
        "val_query": max(1, round(0.10 * per_identity)),
        "val_gallery": max(1, round(0.15 * per_identity)),
    }
    if sum(counts.values()) >= per_identity:
        raise ConfigError("samples_per_identity too small for evaluation splits")
    return counts


def generate(spec: DomainSpec, domain: str = "source") -> SyntheticDataset:
    """Generate one domain's dataset from its spec.

    Args:
        spec: Generation recipe; ``spec.seed`` fixes everything.
        domain: Tag recorded on the dataset ("source" or "target").

    Returns:
        Dataset with identity centers on the unit sphere, per-sample hardness
        flags, and per-identity train/eval splits.
    """
    spec.validate()
    dim = spec.input_dim
    per_id = spec.samples_per_identity

    center_rng = stream(spec.seed, "centers")
    centers = center_rng.normal(size=(spec.identity_count, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    n_hard = int(round(spec.hard_fraction * per_id))
    vectors = np.empty((spec.identity_count * per_id, dim))
    identities = np.empty(spec.identity_count * per_id, dtype=int)
    hard = np.zeros(spec.identity_count * per_id, dtype=bool)
    clutter = np.zeros(spec.identity_count * per_id, dtype=bool)
    basis = _nuisance_basis(dim, stream(spec.seed, "hard-basis"))
    # Fractional clutter budgets are honored in expectation: each identity
    # rounds the shared budget up or down independently, so the population
    # share moves smoothly with clutter_share instead of snapping.
    whole, frac = divmod(spec.clutter_share * n_hard, 1.0)

    for i in range(spec.identity_count):
        sample_rng = stream(spec.seed, "samples", i)
        n_clutter = min(n_hard, int(whole) + int(stream(spec.seed, "clutter-mix", i).uniform() < frac))
        n_band = n_hard - n_clutter
        block = slice(i * per_id, (i + 1) * per_id)
        scatter = sample_rng.normal(size=(per_id, dim))
        x = centers[i] + scatter * spec.intra_easy_sigma
        if n_hard:
            rows = scatter[per_id - n_hard :]
            direction = np.empty((n_hard, dim))
            if n_band:
                coords = rows[:n_band, : basis.shape[1]]
                direction[:n_band] = coords / np.linalg.norm(coords, axis=1, keepdims=True) @ basis.T
            if n_clutter:
                stray = rows[n_band:]
                direction[n_band:] = stray / np.linalg.norm(stray, axis=1, keepdims=True)
            # Graded difficulty for the in-subspace stragglers (each identity
            # gets near-fringe ones as well as far ones), while clutter sits at
            # the far end of the same radius range in arbitrary directions, so
            # displacement norm alone cannot tell the two apart.
            radius = np.concatenate(
                [
                    sample_rng.uniform(*BAND_RADIUS, size=n_band),
                    sample_rng.uniform(*CLUTTER_RADIUS, size=n_clutter),
                ]
            )
            x[per_id - n_hard :] = centers[i] + (spec.intra_hard_sigma * radius)[:, None] * direction
        if spec.transform is not None:
            x = spec.transform.apply(x)
        if spec.noise_sigma > 0.0:
            noise_rng = stream(spec.seed, "noise", i)
            x = x + noise_rng.normal(size=(per_id, dim)) * spec.noise_sigma
        vectors[block] = x
        identities[block] = spec.first_identity + i
        hard[i * per_id + per_id - n_hard : (i + 1) * per_id] = True
        clutter[i * per_id + per_id - n_clutter : (i + 1) * per_id] = True

    splits = _assign_splits(spec, clutter)
    dataset = SyntheticDataset(spec, domain, vectors, identities, hard, clutter, splits)
    if spec.hard_fraction == 0.0:
        _check_separation(dataset)
    return dataset


def _assign_splits(spec: DomainSpec, clutter: np.ndarray) -> dict[str, np.ndarray]:
    per_id = spec.samples_per_identity
    counts = _split_counts(per_id)
    assigned: dict[str, list[int]] = {name: [] for name in ("train", "query", "gallery", "val_query", "val_gallery")}
    for i in range(spec.identity_count):
        split_rng = stream(spec.seed, "splits", i)
        order = split_rng.permutation(per_id) + i * per_id
        # Queries must be recognizable: clutter rows stay out of the query
        # pools and act as gallery/train distractors instead, the way re-ID
        # benchmarks keep junk detections out of the query set.
        order = np.concatenate([order[~clutter[order]], order[clutter[order]]])
        cursor = 0
        for name in ("query", "val_query", "gallery", "val_gallery"):
            take = counts[name]
            assigned[name].extend(order[cursor : cursor + take])
            cursor += take
        assigned["train"].extend(order[cursor:])
    return {name: np.sort(np.asarray(ids, dtype=int)) for name, ids in assigned.items()}


def separation_margin(dataset: SyntheticDataset) -> tuple[float, float]:
    """(largest within-identity distance, smallest between-identity distance)."""
    x = dataset.vectors
    ids = dataset.identities
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    intra = dist[same]
    inter = dist[~same & ~np.eye(len(x), dtype=bool)]
    return float(intra.max()), float(inter.min())


def _check_separation(dataset: SyntheticDataset) -> None:
    intra, inter = separation_margin(dataset)
    if intra >= inter:
        logger.warning(
            "identity clusters overlap despite hard_fraction=0 (max intra %.4f >= min inter %.4f)",
            intra,
            inter,
        )


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random rotation from the QR decomposition of a Gaussian."""
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q *= np.sign(np.diag(r))
    return q


def _nuisance_basis(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis of the domain's hard-sample scatter directions."""
    rank = min(HARD_RANK, dim)
    q, r = np.linalg.qr(rng.normal(size=(dim, rank)))
    q *= np.sign(np.diag(r))
    return q


def make_benchmark(preset: str = "default-shift", seed: int = 0) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Build the (source, target) dataset pair for a named preset.

    ``default-shift`` uses 30 source and 30 disjoint target identities with
    20 samples each in 8 dimensions, 30% hard samples (a 0.42 share of which
    is clutter), and a seeded random rotation plus offset as the target
    transform. ``no-shift`` keeps the target distribution identical to the
    source (identity transform, zero noise) as a control: adaptation should
    gain roughly nothing there.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    seed_rng = stream(seed, "benchmark", preset)
    source_seed, target_seed = (int(s) for s in seed_rng.integers(0, 2**63 - 1, size=2))
    if preset == "no-shift":
        # Control: the target re-draws the source geometry exactly (same
        # centers, scatter, and nuisance subspace), so the only difference
        # from the source domain is the disjoint identity id range.
        target_seed = source_seed

    if preset == "default-shift":
        hardness = {"intra_hard_sigma": 1.05, "clutter_share": 0.42}
    else:
        hardness = {"hard_fraction": 0.0}
    source_spec = DomainSpec(seed=source_seed, first_identity=0, **hardness)
    target_spec = DomainSpec(seed=target_seed, first_identity=1000, **hardness)
    if preset == "default-shift":
        transform_rng = stream(seed, "benchmark", preset, "transform")
        rotation = _random_rotation(source_spec.input_dim, transform_rng)
        offset = transform_rng.normal(size=source_spec.input_dim)
        offset *= 1.2 / np.linalg.norm(offset)
        target_spec.transform = DomainTransform(rotation, offset)
        target_spec.noise_sigma = 0.05

    source = generate(source_spec, domain="source")
    target = generate(target_spec, domain="target")
    return source, target


def dataset_to_dict(dataset: SyntheticDataset) -> dict:
    return {
        "spec": dataset.spec.to_dict(),
        "domain": dataset.domain,
        "samples": [
            {"vector": v.tolist(), "identity": int(i), "hard": bool(h), "clutter": bool(c)}
            for v, i, h, c in zip(dataset.vectors, dataset.identities, dataset.hard, dataset.clutter)
        ],
        "splits": {name: ids.tolist() for name, ids in dataset.splits.items()},
    }


def dataset_from_dict(payload: dict) -> SyntheticDataset:
    samples = payload["samples"]
    if not samples:
        raise ShapeError("dataset payload holds no samples")
    return SyntheticDataset(
        spec=DomainSpec.from_dict(payload["spec"]),
        domain=payload["domain"],
        vectors=np.asarray([s["vector"] for s in samples], dtype=float),
        identities=np.asarray([s["identity"] for s in samples], dtype=int),
        hard=np.asarray([s["hard"] for s in samples], dtype=bool),
        clutter=np.asarray([s.get("clutter", False) for s in samples], dtype=bool),
        splits={name: np.asarray(ids, dtype=int) for name, ids in payload["splits"].items()},
    )


def save_dataset(dataset: SyntheticDataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(dataset), fh)


def load_dataset(path) -> SyntheticDataset:
    with open(path) as fh:
        return dataset_from_dict(json.load(fh))
