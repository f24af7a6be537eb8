"""Clustering tests: DBSCAN oracle equivalence, peeling partitions, F-score."""

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from cotier.clustering import (
    OUTLIER,
    EpsSchedule,
    dbscan,
    average_fscore,
    load_partition,
    pairwise_fscore,
    partition_granularity,
    save_partition,
)
from cotier.errors import ConfigError, NumericError, ShapeError

from conftest import blob_points, identity_encoder, random_params


def oracle_dbscan(points, eps, min_pts):
    """Brute-force reference: neighbor matrix, components, size filter.

    Core points have >= min_pts neighbors within eps (self included);
    clusters are the eps-connected components of the core set; every other
    point joins the cluster of its nearest core within eps (lowest index on
    ties) or stays an outlier; clusters that end up smaller than min_pts
    dissolve back to outliers.
    """
    n = len(points)
    dist = cdist(points, points)
    within = dist <= eps
    core = within.sum(axis=1) >= min_pts

    labels = np.full(n, OUTLIER, dtype=int)
    core_ids = np.flatnonzero(core)
    if len(core_ids):
        graph = csr_matrix(within[np.ix_(core_ids, core_ids)])
        _, comp = connected_components(graph, directed=False)
        labels[core_ids] = comp
    for p in np.flatnonzero(~core):
        reach = np.flatnonzero(within[p] & core)
        if len(reach):
            labels[p] = labels[reach[np.argmin(dist[p, reach])]]
    ids, counts = np.unique(labels[labels != OUTLIER], return_counts=True)
    for c in ids[counts < min_pts]:
        labels[labels == c] = OUTLIER
    return labels


def partitions_agree(a, b):
    """True when two labelings define the same partition up to relabeling."""
    a = np.asarray(a)
    b = np.asarray(b)
    if not np.array_equal(a == OUTLIER, b == OUTLIER):
        return False
    forward = {}
    backward = {}
    for x, y in zip(a, b):
        if x == OUTLIER:
            continue
        if forward.setdefault(x, y) != y or backward.setdefault(y, x) != x:
            return False
    return True


def random_instance(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(5, 201))
    dim = int(gen.integers(2, 17))
    k = int(gen.integers(1, 6))
    centers = gen.normal(size=(k, dim)) * 3.0
    points = np.concatenate(
        [centers[gen.integers(0, k)] + gen.normal(size=dim) * gen.uniform(0.1, 1.0) for _ in range(n)]
    ).reshape(n, dim)
    dist = cdist(points, points)
    upper = dist[np.triu_indices(n, k=1)]
    eps = float(np.percentile(upper, gen.uniform(2.0, 40.0)))
    if eps <= 0.0:
        eps = float(upper[upper > 0].min())
    min_pts = int(gen.integers(1, 7))
    return points, eps, min_pts


def test_dbscan_matches_brute_force_oracle():
    """100 seeded instances, N <= 200, dims <= 16: outlier sets identical and
    partitions identical up to relabeling."""
    for seed in range(100):
        points, eps, min_pts = random_instance(seed)
        result = dbscan(points, eps=eps, min_pts=min_pts)
        expected = oracle_dbscan(points, eps, min_pts)
        assert partitions_agree(result.assignments, expected), f"instance {seed}"


def test_dbscan_single_point_is_outlier():
    result = dbscan(np.zeros((1, 3)), eps=1.0, min_pts=4)
    assert np.array_equal(result.assignments, [OUTLIER])
    assert result.cluster_count == 0


def test_dbscan_two_coincident_groups_plus_isolate():
    """Two groups of 5 coincident points far apart plus one isolated point."""
    points = np.concatenate([np.zeros((5, 2)), np.full((5, 2), 10.0), [[100.0, 100.0]]])
    result = dbscan(points, eps=0.5, min_pts=4)
    assert result.cluster_count == 2
    assert np.array_equal(result.outliers(), [10])
    assert len(set(result.assignments[:5])) == 1
    assert len(set(result.assignments[5:10])) == 1


def test_dbscan_order_invariant(rng):
    points, _ = blob_points(rng, n_blobs=3, per_blob=12, dim=4, spread=0.3)
    points = np.concatenate([points, rng.normal(size=(6, 4)) * 8.0])
    base = dbscan(points, eps=1.0, min_pts=4)
    perm = rng.permutation(len(points))
    shuffled = dbscan(points[perm], eps=1.0, min_pts=4)
    assert partitions_agree(base.assignments[perm], shuffled.assignments)


def test_dbscan_small_clusters_dissolved():
    """A cluster drained below min_pts by border reassignment dissolves.

    Core a0 only qualifies through three satellite borders; a chain-shaped
    second cluster sits nearer to satellite b1 and claims it, leaving a0 with
    two members plus itself, under min_pts=4.
    """
    points = np.array(
        [
            [0.0, 0.0],  # a0: core via its three satellites
            [0.9, 0.0],  # b1: stolen by the chain (t1 at 0.8 < a0 at 0.9)
            [-0.45, 0.7794],  # b2
            [-0.45, -0.7794],  # b3
            [1.7, 0.0],  # t1: core via the coincident trio
            [2.65, 0.0],
            [2.65, 0.0],
            [2.65, 0.0],
        ]
    )
    result = dbscan(points, eps=1.0, min_pts=4)
    assert result.cluster_count == 1
    assert np.array_equal(result.outliers(), [0, 2, 3])
    assert len(set(result.assignments[[1, 4, 5, 6, 7]])) == 1


def test_dbscan_empty_and_errors():
    empty = dbscan(np.empty((0, 3)), eps=1.0, min_pts=2)
    assert len(empty.assignments) == 0 and empty.cluster_count == 0
    with pytest.raises(ConfigError):
        dbscan(np.zeros((2, 2)), eps=0.0, min_pts=2)
    with pytest.raises(ConfigError):
        dbscan(np.zeros((2, 2)), eps=1.0, min_pts=0)
    with pytest.raises(NumericError):
        dbscan(np.array([[np.nan, 0.0]]), eps=1.0, min_pts=1)


def test_dbscan_cluster_ids_contiguous(rng):
    points, _ = blob_points(rng, n_blobs=4, per_blob=8, dim=3, spread=0.2)
    result = dbscan(points, eps=1.0, min_pts=4)
    present = np.unique(result.assignments[result.assignments != OUTLIER])
    assert np.array_equal(present, np.arange(result.cluster_count))
    ids, counts = np.unique(result.assignments[result.assignments != OUTLIER], return_counts=True)
    assert (counts >= 4).all()


def test_partition_tiers_are_a_partition_fuzz():
    """1000 fuzzed inputs, n in 2..6: tiers disjoint, union is everything."""
    for case in range(1000):
        gen = np.random.default_rng(10_000 + case)
        n_samples = int(gen.integers(4, 40))
        dim = int(gen.integers(2, 6))
        inputs = gen.normal(size=(n_samples, dim)) * gen.uniform(0.5, 3.0)
        model = random_params([dim, 5, 3], seed=case % 17)
        n = int(gen.integers(2, 7))
        part = partition_granularity(inputs, model, n, EpsSchedule(percentile=gen.uniform(2, 30)))
        assert len(part.tiers) == n
        everything = np.concatenate(part.tiers)
        assert len(everything) == n_samples
        assert len(np.unique(everything)) == n_samples


def test_partition_single_peel_blob_plus_outliers():
    """n=2: a dense blob forms T1, far points form T2."""
    gen = np.random.default_rng(1)
    blob = gen.normal(size=(20, 3)) * 0.01
    far = np.array([[50.0, 0, 0], [0, 50.0, 0], [0, 0, 50.0]])
    inputs = np.concatenate([blob, far])
    part = partition_granularity(inputs, identity_encoder(3), 2, EpsSchedule(base=1.0), min_pts=4)
    assert np.array_equal(np.sort(part.tiers[0]), np.arange(20))
    assert np.array_equal(np.sort(part.tiers[1]), [20, 21, 22])
    assert (part.pseudo_labels[:20] != OUTLIER).all()
    assert (part.pseudo_labels[20:] == OUTLIER).all()


def test_partition_matches_straight_line_peeling(rng):
    """Tier memberships equal an independent re-execution of the peeling loop
    against the same dbscan outputs."""
    inputs, _ = blob_points(rng, n_blobs=4, per_blob=10, dim=4, spread=0.4)
    inputs = np.concatenate([inputs, rng.normal(size=(8, 4)) * 6.0])
    model = random_params([4, 6, 4], seed=2)
    n = 3
    schedule = EpsSchedule(percentile=10.0)
    part = partition_granularity(inputs, model, n, schedule, min_pts=3)

    from cotier.encoder import embed_batch

    emb = embed_batch(model, inputs)
    base = schedule.resolve_base(emb)
    remaining = np.arange(len(inputs))
    expected_tiers = [None] * n
    for round_index in range(1, n):
        result = dbscan(emb[remaining], eps=base * schedule.decay ** (round_index - 1), min_pts=3)
        out = result.assignments == OUTLIER
        expected_tiers[n - round_index] = remaining[out]
        remaining = remaining[~out]
    expected_tiers[0] = remaining
    for got, want in zip(part.tiers, expected_tiers):
        assert np.array_equal(got, want)


def test_partition_pseudo_labels_come_from_admitting_round():
    """Labels of a peeled tier stay consistent with the round that kept them:
    within a tier, samples clustered together share a pseudo label, and the
    last tier has none."""
    gen = np.random.default_rng(3)
    inputs = np.concatenate(
        [
            gen.normal(size=(12, 2)) * 0.02,
            [[5.0, 5.0]] * 6 + gen.normal(size=(6, 2)) * 0.45,
            gen.uniform(-20, 20, size=(5, 2)),
        ]
    )
    part = partition_granularity(inputs, identity_encoder(2), 3, EpsSchedule(base=1.5, decay=0.2), min_pts=4)
    assert (part.pseudo_labels[part.tiers[-1]] == OUTLIER).all()
    for tier in part.tiers[:-1]:
        assert (part.pseudo_labels[tier] != OUTLIER).all()
    # labels never collide across rounds: a T1 label never appears in T2
    t1 = set(part.pseudo_labels[part.tiers[0]])
    t2 = set(part.pseudo_labels[part.tiers[1]])
    assert not (t1 & t2)


def test_partition_empty_rounds_leave_empty_tiers():
    # every point isolated: round 1 peels everything, later rounds see nothing
    inputs = np.arange(10, dtype=float)[:, None] * 100.0
    part = partition_granularity(inputs, identity_encoder(1), 4, EpsSchedule(base=1.0), min_pts=3)
    assert len(part.tiers[-1]) == 10
    assert all(len(t) == 0 for t in part.tiers[:-1])


def test_partition_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        partition_granularity(np.zeros((3, 2)), identity_encoder(2), n=1)
    with pytest.raises(ShapeError):
        partition_granularity(np.empty((0, 2)), identity_encoder(2), n=2)


def test_eps_schedule_percentile_and_decay():
    emb = np.array([[0.0], [1.0], [2.0], [4.0]])
    schedule = EpsSchedule(percentile=50.0, decay=0.5)
    base = schedule.resolve_base(emb)
    assert base == np.percentile([1.0, 2.0, 4.0, 1.0, 3.0, 2.0], 50.0)
    assert schedule.eps_for_round(1, base) == base
    assert schedule.eps_for_round(3, base) == base * 0.25
    # explicit base wins over the data
    assert EpsSchedule(base=7.0).resolve_base(emb) == 7.0
    # duplicate-heavy data cannot produce a zero radius
    dupes = np.zeros((5, 2))
    dupes[-1] = [1.0, 0.0]
    assert EpsSchedule(percentile=5.0).resolve_base(dupes) > 0.0


def test_pairwise_fscore_hand_cases():
    truth = np.array([0, 0, 1, 1])
    # one big cluster: precision 2/6, recall 2/2, F = 0.5
    assert pairwise_fscore(np.zeros(4, dtype=int), truth) == pytest.approx(0.5)
    # perfect labeling
    assert pairwise_fscore(truth, truth) == 1.0
    # all-distinct truth: no true-positive pair exists
    assert pairwise_fscore(np.zeros(4, dtype=int), np.arange(4)) == 0.0


def test_pairwise_fscore_relabeling_and_outliers():
    truth = np.array([0, 0, 1, 1, 2])
    pseudo = np.array([5, 5, 9, 9, OUTLIER])
    relabeled = np.array([1, 1, 0, 0, OUTLIER])
    assert pairwise_fscore(pseudo, truth) == pairwise_fscore(relabeled, truth) == 1.0
    with pytest.raises(ShapeError):
        pairwise_fscore(np.zeros(3, dtype=int), truth)


def test_average_fscore_skips_empty_tiers(rng):
    inputs = np.concatenate([rng.normal(size=(16, 2)) * 0.02, rng.uniform(-30, 30, size=(4, 2))])
    truth = np.concatenate([np.zeros(16, dtype=int), np.arange(1, 5)])
    part = partition_granularity(inputs, identity_encoder(2), 3, EpsSchedule(base=1.0, decay=0.9), min_pts=4)
    score = average_fscore(part, truth)
    per_tier = [
        pairwise_fscore(part.pseudo_labels[t], truth[t]) for t in part.tiers[:-1] if len(t)
    ]
    assert score == pytest.approx(float(np.mean(per_tier)))


def test_partition_json_roundtrip(tmp_path, rng):
    inputs, _ = blob_points(rng, n_blobs=3, per_blob=8, dim=3, spread=0.3)
    part = partition_granularity(inputs, random_params([3, 4], seed=5), 3, EpsSchedule(percentile=15.0))
    path = tmp_path / "partition.json"
    save_partition(part, path)
    loaded = load_partition(path)
    assert loaded.n == part.n
    assert loaded.eps_schedule == part.eps_schedule
    assert np.array_equal(loaded.pseudo_labels, part.pseudo_labels)
    for a, b in zip(loaded.tiers, part.tiers):
        assert np.array_equal(a, b)
