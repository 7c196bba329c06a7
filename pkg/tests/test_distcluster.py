"""Distance kernels and clustering against brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from castgraph.distcluster import (
    ClusterLabels,
    CondensedDistanceMatrix,
    DbscanConfig,
    HdbscanParams,
    cluster_with_fallback,
    cosine_distance,
    dbscan,
    distance_matrix,
    hdbscan,
    k_distance_eps,
)
from castgraph.errors import DimensionMismatch, TooFewPoints, ZeroVector
from castgraph.synth import sample_blobs

from oracles import naive_cosine_matrix, oracle_dbscan_core_points, oracle_hdbscan

PARAMS = HdbscanParams(min_cluster_size=2, min_samples=2)


def partition_of(labels) -> set[frozenset[int]]:
    groups: dict[int, set[int]] = {}
    for idx, label in enumerate(labels):
        groups.setdefault(int(label), set()).add(idx)
    return {frozenset(v) for k, v in groups.items() if k != -1}


# --- cosine distance -----------------------------------------------------------

def test_cosine_identical_is_zero():
    assert cosine_distance([3.0, 4.0], [3.0, 4.0]) == 0.0


def test_cosine_orthogonal_is_one():
    assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)


def test_cosine_antipodal_is_two():
    v = np.array([0.2, -0.7, 1.1])
    assert cosine_distance(v, -v) == pytest.approx(2.0)


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_distance([1.0, 2.0], [1.0, 2.0, 3.0])


def test_cosine_zero_vector():
    with pytest.raises(ZeroVector):
        cosine_distance([0.0, 0.0], [1.0, 0.0])


# --- distance matrix -----------------------------------------------------------

def test_matrix_two_identical_points():
    m = distance_matrix(np.array([[1.0, 2.0], [1.0, 2.0]]))
    assert m.entries.tolist() == [0.0]


def test_matrix_orthonormal_basis():
    m = distance_matrix(np.eye(3))
    assert m.entries.tolist() == pytest.approx([1.0, 1.0, 1.0])


def test_matrix_against_naive_oracle():
    rng = np.random.default_rng(7)
    points = rng.standard_normal((50, 24))
    m = distance_matrix(points)
    naive = naive_cosine_matrix(points)
    for i in range(50):
        for j in range(i + 1, 50):
            assert m.get(i, j) == pytest.approx(naive[i][j], abs=1e-6)
            assert m.get(j, i) == m.get(i, j)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_matrix_worker_count_is_invisible(workers):
    rng = np.random.default_rng(3)
    points = rng.standard_normal((41, 16))
    base = distance_matrix(points, workers=1)
    parallel = distance_matrix(points, workers=workers)
    assert np.array_equal(base.entries, parallel.entries)


def test_matrix_rejects_single_point():
    with pytest.raises(TooFewPoints):
        distance_matrix(np.ones((1, 4)))


def test_condensed_index_round_trip():
    m = CondensedDistanceMatrix(5, np.arange(10, dtype=np.float64))
    square = m.to_square()
    for i in range(5):
        for j in range(5):
            assert square[i, j] == m.get(i, j)


# --- hdbscan -------------------------------------------------------------------

def test_hdbscan_all_identical_single_cluster():
    points = np.tile([0.3, 0.4, 1.2], (6, 1))
    labels = hdbscan(distance_matrix(points), PARAMS)
    assert labels.labels.tolist() == [0] * 6


def test_hdbscan_two_blobs_match_generator():
    points, truth = sample_blobs(60, 2, 512, 4.0, seed=11)
    labels = hdbscan(distance_matrix(points), PARAMS)
    assert labels.n_clusters == 2
    assert partition_of(labels.labels) == partition_of(truth)


def test_hdbscan_single_blob_all_noise():
    points, _ = sample_blobs(40, 1, 512, 5.0, seed=23)
    labels = hdbscan(distance_matrix(points), PARAMS)
    assert labels.all_noise()


def test_hdbscan_too_few_points():
    m = distance_matrix(np.eye(3))
    with pytest.raises(TooFewPoints):
        hdbscan(m, HdbscanParams(min_cluster_size=4))


@pytest.mark.parametrize("seed", range(25))
def test_hdbscan_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(4, 13))
    k = int(rng.integers(1, 4))
    points, _ = sample_blobs(n, k, 32, 25.0, seed=2000 + seed)
    m = distance_matrix(points)
    got = hdbscan(m, PARAMS).labels.tolist()
    expected = oracle_hdbscan(m.to_square().tolist(), 2, 2)
    assert got == expected


@pytest.mark.parametrize("mcs", [2, 3])
def test_hdbscan_oracle_other_min_cluster_size(mcs):
    for seed in range(10):
        points, _ = sample_blobs(10, 2, 16, 20.0, seed=3000 + seed)
        m = distance_matrix(points)
        got = hdbscan(m, HdbscanParams(mcs, mcs)).labels.tolist()
        expected = oracle_hdbscan(m.to_square().tolist(), mcs, mcs)
        assert got == expected


def test_hdbscan_permutation_invariant():
    points, _ = sample_blobs(36, 3, 128, 6.0, seed=5)
    base = hdbscan(distance_matrix(points), PARAMS)
    rng = np.random.default_rng(9)
    perm = rng.permutation(len(points))
    shuffled = hdbscan(distance_matrix(points[perm]), PARAMS)
    reference = {frozenset(np.flatnonzero(base.labels == c).tolist()) for c in range(base.n_clusters)}
    remapped = {
        frozenset(int(perm[i]) for i in np.flatnonzero(shuffled.labels == c))
        for c in range(shuffled.n_clusters)
    }
    assert reference == remapped


def test_hdbscan_scale_invariant():
    points, _ = sample_blobs(30, 2, 64, 8.0, seed=17)
    m = distance_matrix(points)
    base = hdbscan(m, PARAMS)
    for factor in (0.25, 3.5):
        scaled = CondensedDistanceMatrix(m.n, m.entries * factor)
        assert hdbscan(scaled, PARAMS).labels.tolist() == base.labels.tolist()


@pytest.mark.parametrize("mcs", [2, 3])
def test_hdbscan_agrees_with_sklearn(mcs):
    sklearn_cluster = pytest.importorskip("sklearn.cluster")
    if not hasattr(sklearn_cluster, "HDBSCAN"):
        pytest.skip("sklearn without HDBSCAN")

    def partition(labels):
        groups: dict[int, set[int]] = {}
        noise = set()
        for i, l in enumerate(labels):
            (noise.add(i) if l == -1 else groups.setdefault(int(l), set()).add(i))
        return {frozenset(v) for v in groups.values()}, noise

    for seed in range(30):
        rng = np.random.default_rng(5000 + seed)
        k = int(rng.integers(1, 5))
        n = int(rng.integers(max(12, mcs + 2), 50))
        points, _ = sample_blobs(n, k, 512, float(rng.uniform(1.0, 8.0)), seed=seed)
        m = distance_matrix(points)
        mine = hdbscan(m, HdbscanParams(mcs, mcs))
        other = sklearn_cluster.HDBSCAN(
            min_cluster_size=mcs, min_samples=mcs, metric="precomputed"
        ).fit(m.to_square())
        assert partition(mine.labels) == partition(other.labels_), f"seed {seed}"


def test_hdbscan_label_validity_fuzz():
    rng = np.random.default_rng(64)
    for _ in range(40):
        n = int(rng.integers(2, 30))
        square = rng.uniform(0.05, 2.0, size=(n, n))
        square = np.triu(square, 1)
        square = square + square.T
        m = CondensedDistanceMatrix(n, square[np.triu_indices(n, 1)])
        labels = hdbscan(m, PARAMS).labels
        assert labels.min() >= -1
        found = sorted(set(labels.tolist()) - {-1})
        assert found == list(range(len(found)))


def test_dbscan_label_validity_fuzz():
    rng = np.random.default_rng(65)
    for _ in range(40):
        n = int(rng.integers(1, 40))
        points = rng.standard_normal((max(n, 2), 6))
        m = distance_matrix(points)
        labels = dbscan(m, float(rng.uniform(0.1, 1.5)), int(rng.integers(1, 5))).labels
        assert labels.min() >= -1
        found = sorted(set(labels.tolist()) - {-1})
        assert found == list(range(len(found)))


# --- dbscan --------------------------------------------------------------------

def test_dbscan_single_blob_large_eps():
    points, _ = sample_blobs(20, 1, 64, 3.0, seed=2)
    labels = dbscan(distance_matrix(points), eps=1.9, min_pts=2)
    assert labels.n_clusters == 1
    assert labels.n_noise == 0


def test_dbscan_mutually_distant_all_noise():
    labels = dbscan(distance_matrix(np.eye(5)), eps=0.5, min_pts=2)
    assert labels.all_noise()


def test_dbscan_three_blobs_with_heuristic_eps():
    points, truth = sample_blobs(45, 3, 256, 4.0, seed=31)
    m = distance_matrix(points)
    labels = dbscan(m, eps=k_distance_eps(m), min_pts=2)
    # three clusters in one-to-one blob correspondence; a percentile eps may
    # leave a few boundary stragglers as noise
    assert labels.n_clusters == 3
    blob_of_cluster = {}
    for idx, label in enumerate(labels.labels):
        if label == -1:
            continue
        blob_of_cluster.setdefault(int(label), set()).add(int(truth[idx]))
    assert sorted(map(len, blob_of_cluster.values())) == [1, 1, 1]
    assert len({next(iter(v)) for v in blob_of_cluster.values()}) == 3
    assert labels.n_noise <= len(points) * 0.1


@pytest.mark.parametrize("seed", range(8))
def test_dbscan_core_points_match_oracle(seed):
    rng = np.random.default_rng(400 + seed)
    points = rng.standard_normal((60, 8))
    m = distance_matrix(points)
    eps = float(rng.uniform(0.2, 1.2))
    min_pts = int(rng.integers(1, 6))
    labels = dbscan(m, eps, min_pts)
    square = m.to_square().tolist()
    expected_core = oracle_dbscan_core_points(square, eps, min_pts)
    for i, is_core in enumerate(expected_core):
        if is_core:
            assert labels.labels[i] != -1
    # non-core labeled points must sit within eps of a core point of the
    # same cluster (border points)
    for i in range(60):
        if labels.labels[i] != -1 and not expected_core[i]:
            assert any(
                expected_core[j]
                and labels.labels[j] == labels.labels[i]
                and square[i][j] <= eps
                for j in range(60)
            )


def test_dbscan_border_point_goes_to_first_cluster():
    # 1-d layout mapped onto distinct angles: two cores flank one border point
    m = CondensedDistanceMatrix(
        5,
        np.array(
            [0.1, 0.5, 0.6, 1.4, 0.4, 0.5, 1.3, 0.1, 0.9, 0.8], dtype=np.float64
        ),
    )
    labels = dbscan(m, eps=0.45, min_pts=2)
    # point 2 is within eps of both clusters; ascending seed order claims it first
    assert labels.labels[2] == labels.labels[0]


# --- fallback policy -------------------------------------------------------------

def test_fallback_unused_for_separated_blobs():
    points, truth = sample_blobs(50, 2, 256, 5.0, seed=41)
    labels, used = cluster_with_fallback(distance_matrix(points), PARAMS)
    assert not used
    assert partition_of(labels.labels) == partition_of(truth)


def test_fallback_used_for_single_blob():
    points, _ = sample_blobs(40, 1, 256, 5.0, seed=42)
    labels, used = cluster_with_fallback(distance_matrix(points), PARAMS)
    assert used
    assert labels.n_clusters == 1


def test_fallback_pathological_all_noise():
    labels, used = cluster_with_fallback(
        distance_matrix(np.eye(2)), PARAMS, DbscanConfig(eps=0.5, min_pts=2)
    )
    assert used
    assert labels.all_noise()


def test_fallback_single_point_gets_label():
    m = CondensedDistanceMatrix(1, np.empty(0, dtype=np.float64))
    labels, used = cluster_with_fallback(m, PARAMS)
    assert used
    assert labels.labels.tolist() == [0]


# --- label csv -------------------------------------------------------------------

def test_labels_csv_round_trip(tmp_path):
    labels = ClusterLabels(np.asarray([0, 1, -1, 0]))
    path = tmp_path / "labels.csv"
    labels.to_csv(path, ["a", "b", "c", "d"])
    from castgraph.distcluster import labels_from_csv

    ids, loaded = labels_from_csv(path)
    assert ids == ["a", "b", "c", "d"]
    assert loaded.labels.tolist() == [0, 1, -1, 0]
