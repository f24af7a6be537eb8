"""Synthetic dataset generator and benchmark preset tests."""

import numpy as np
import pytest

from cotier.clustering import dbscan, pairwise_fscore
from cotier.errors import ConfigError
from cotier.losses import pairwise_distances
from cotier.synthdata import (
    BAND_RADIUS,
    CLUTTER_RADIUS,
    PRESETS,
    DomainSpec,
    dataset_from_dict,
    dataset_to_dict,
    generate,
    load_dataset,
    make_benchmark,
    save_dataset,
)


def test_generation_is_deterministic():
    spec = DomainSpec(identity_count=5, samples_per_identity=8, seed=31)
    a = generate(spec, domain="target")
    b = generate(spec, domain="target")
    assert np.array_equal(a.vectors, b.vectors)
    assert np.array_equal(a.identities, b.identities)
    assert np.array_equal(a.hard, b.hard)
    assert np.array_equal(a.clutter, b.clutter)
    for name in a.splits:
        assert np.array_equal(a.splits[name], b.splits[name])


def test_zero_sigma_collapses_to_centers():
    """hard_fraction 0 and zero easy sigma: every sample equals its center."""
    spec = DomainSpec(
        identity_count=3,
        samples_per_identity=6,
        intra_easy_sigma=0.0,
        hard_fraction=0.0,
        seed=2,
    )
    ds = generate(spec, domain="source")
    for i in range(3):
        block = ds.vectors[ds.identities == i]
        assert np.allclose(block, block[0], atol=0.0)
        assert np.allclose(np.linalg.norm(block[0]), 1.0, atol=1e-12)


def test_two_identities_recovered_by_clustering():
    """Well-separated tiny-sigma identities cluster perfectly."""
    spec = DomainSpec(
        identity_count=2,
        samples_per_identity=10,
        input_dim=6,
        intra_easy_sigma=0.01,
        hard_fraction=0.0,
        seed=5,
    )
    ds = generate(spec, domain="source")
    result = dbscan(ds.vectors, eps=0.2, min_pts=4)
    assert result.cluster_count == 2
    assert pairwise_fscore(result.assignments, ds.identities) == 1.0


def test_separation_invariant_under_its_premise():
    """With hard_fraction 0 and genuinely separated centers, the largest
    within-identity distance stays below the smallest between-identity one."""
    for seed in range(4):
        spec = DomainSpec(
            identity_count=4,
            samples_per_identity=10,
            input_dim=8,
            intra_easy_sigma=0.01,
            hard_fraction=0.0,
            seed=seed,
        )
        ds = generate(spec, domain="source")
        dist = pairwise_distances(ds.vectors)
        same = ds.identities[:, None] == ds.identities[None, :]
        np.fill_diagonal(same, False)
        off_diag = ~np.eye(len(ds.vectors), dtype=bool)
        assert dist[same].max() < dist[~same & off_diag].min()


def test_hard_sample_flags_and_radii():
    """Hard rows are displaced from their center by a radius inside the band
    or clutter range; easy rows stay near it."""
    spec = DomainSpec(
        identity_count=4,
        samples_per_identity=10,
        intra_easy_sigma=0.0,
        intra_hard_sigma=1.0,
        hard_fraction=0.3,
        seed=9,
    )
    ds = generate(spec, domain="source")
    assert ds.hard.sum() == 4 * 3
    centers = {}
    for i in range(4):
        easy = ds.vectors[(ds.identities == i) & ~ds.hard]
        centers[i] = easy[0]
        assert np.allclose(easy, easy[0], atol=0.0)
    lo = min(BAND_RADIUS[0], CLUTTER_RADIUS[0])
    hi = max(BAND_RADIUS[1], CLUTTER_RADIUS[1])
    for row in np.flatnonzero(ds.hard):
        radius = np.linalg.norm(ds.vectors[row] - centers[int(ds.identities[row])])
        assert lo - 1e-9 <= radius <= hi + 1e-9


def test_clutter_share_bounds_and_flags():
    spec = DomainSpec(
        identity_count=10,
        samples_per_identity=10,
        hard_fraction=0.4,
        clutter_share=0.5,
        seed=3,
    )
    ds = generate(spec, domain="source")
    assert not (ds.clutter & ~ds.hard).any()
    per_id = [ds.clutter[ds.identities == i].sum() for i in range(10)]
    assert all(c in (2, 3) for c in per_id)  # floor/ceil of 0.5 * 4
    assert (ds.clutter.sum() / ds.hard.sum()) == pytest.approx(0.5, abs=0.2)


def test_spec_validation():
    with pytest.raises(ConfigError):
        generate(DomainSpec(identity_count=0))
    with pytest.raises(ConfigError):
        DomainSpec(hard_fraction=1.5).validate()
    with pytest.raises(ConfigError):
        DomainSpec(intra_easy_sigma=-0.1).validate()
    with pytest.raises(ConfigError):
        DomainSpec(clutter_share=-0.2).validate()
    with pytest.raises(ConfigError):
        # too few samples per identity to carve out evaluation splits
        generate(DomainSpec(identity_count=2, samples_per_identity=2))


def test_splits_are_disjoint_and_queries_answerable():
    for seed in (0, 1):
        source, target = make_benchmark("default-shift", seed)
        for ds in (source, target):
            all_idx = np.concatenate(list(ds.splits.values()))
            assert len(all_idx) == len(np.unique(all_idx))
            for q_name, g_name in (("query", "gallery"), ("val_query", "val_gallery")):
                q_ids = set(ds.identities[ds.splits[q_name]])
                g_ids = set(ds.identities[ds.splits[g_name]])
                assert q_ids <= g_ids


def test_query_pools_exclude_clutter():
    """Clutter rows act as gallery and train distractors, never as queries."""
    _, target = make_benchmark("default-shift", 0)
    assert target.clutter.any()
    for name in ("query", "val_query"):
        assert not target.clutter[target.splits[name]].any()
    distractors = np.concatenate([target.splits["train"], target.splits["gallery"], target.splits["val_gallery"]])
    assert target.clutter[distractors].sum() == target.clutter.sum()


def test_benchmark_counts_and_disjoint_identities():
    source, target = make_benchmark("default-shift", 0)
    assert len(source) == 600 and len(target) == 600
    assert source.domain == "source" and target.domain == "target"
    assert not (set(source.identities) & set(target.identities))


def test_benchmark_applies_shift():
    source, target = make_benchmark("default-shift", 0)
    assert target.spec.transform is not None
    assert target.spec.noise_sigma > 0.0
    assert source.spec.transform is None


def test_no_shift_preset_is_clean_control():
    source, target = make_benchmark("no-shift", 0)
    assert target.spec.transform is None
    assert target.spec.noise_sigma == 0.0
    assert not source.hard.any() and not target.hard.any()
    # the control re-draws the source geometry under fresh identity ids
    assert np.array_equal(source.vectors, target.vectors)
    assert not (set(source.identities) & set(target.identities))


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        make_benchmark("nonexistent", 0)
    assert "default-shift" in PRESETS and "no-shift" in PRESETS


def test_dataset_json_roundtrip(tmp_path):
    _, target = make_benchmark("default-shift", 3)
    path = tmp_path / "target.json"
    save_dataset(target, path)
    loaded = load_dataset(path)
    assert np.array_equal(loaded.vectors, target.vectors)
    assert np.array_equal(loaded.identities, target.identities)
    assert np.array_equal(loaded.hard, target.hard)
    assert np.array_equal(loaded.clutter, target.clutter)
    assert loaded.domain == target.domain
    for name in target.splits:
        assert np.array_equal(loaded.splits[name], target.splits[name])


def test_dataset_dict_tolerates_missing_clutter_field():
    ds = generate(DomainSpec(identity_count=2, samples_per_identity=6, seed=1), domain="source")
    payload = dataset_to_dict(ds)
    for sample in payload["samples"]:
        sample.pop("clutter")
    loaded = dataset_from_dict(payload)
    assert not loaded.clutter.any()
