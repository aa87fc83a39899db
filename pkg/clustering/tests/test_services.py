import math
from collections import Counter

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from clustering.services import (
    ClusterDistances,
    ClusteringDegenerateError,
    ClusteringDomainError,
    Clustering,
    Role,
    TraceWindow,
    adjusted_rand_index,
    all_to_all_ari,
    cluster_distances,
    cluster_quality_report,
    cluster_with_k,
    consecutive_ari,
    dbscan,
    default_dbscan_params,
    form_two_clusters,
    form_two_clusters_widening,
    sliding_windows,
)


def brute_force_dbscan(points, eps, min_pts):
    """Neighbourhood expansion in ascending index order."""
    matrix = np.asarray(points, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    n = len(matrix)
    neighbours = []
    for i in range(n):
        distances = np.sqrt(((matrix - matrix[i]) ** 2).sum(axis=1))
        neighbours.append([j for j in range(n) if distances[j] <= eps])
    core = [len(nb) >= min_pts for nb in neighbours]
    labels = [-1] * n
    label = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = label
        stack = [i]
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in neighbours[j]:
                if labels[k] == -1:
                    labels[k] = label
                    stack.append(k)
        label += 1
    return tuple(labels)


def contingency_ari(a, b):
    n = len(a)
    pairs = Counter(zip(a, b))
    sum_cells = sum(math.comb(c, 2) for c in pairs.values())
    sum_a = sum(math.comb(c, 2) for c in Counter(a).values())
    sum_b = sum(math.comb(c, 2) for c in Counter(b).values())
    expected = sum_a * sum_b / math.comb(n, 2)
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (sum_cells - expected) / (maximum - expected)


class DbscanTests(SimpleTestCase):
    def test_two_clusters_and_noise(self) -> None:
        clustering = dbscan([1, 2, 3, 10, 11, 12, 100], eps=2, min_pts=2)
        self.assertEqual(clustering.labels, (0, 0, 0, 1, 1, 1, -1))
        self.assertEqual(clustering.num_clusters, 2)

    def test_single_point_self_neighbourhood(self) -> None:
        self.assertEqual(dbscan([5.0], eps=1, min_pts=1).labels, (0,))

    def test_isolated_points_are_noise(self) -> None:
        clustering = dbscan([0, 100], eps=1, min_pts=2)
        self.assertEqual(clustering.labels, (-1, -1))
        self.assertEqual(clustering.num_clusters, 0)

    def test_empty_input_rejected(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            dbscan([], eps=1, min_pts=1)

    def test_invalid_parameters_rejected(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            dbscan([1, 2], eps=0, min_pts=1)
        with self.assertRaises(ClusteringDomainError):
            dbscan([1, 2], eps=1, min_pts=0)

    def test_matches_brute_force_oracle(self) -> None:
        rng = np.random.default_rng(314)
        for _ in range(200):
            n = int(rng.integers(1, 31))
            dim = int(rng.integers(1, 4))
            points = rng.uniform(0, 20, size=(n, dim))
            eps = float(rng.uniform(0.5, 6))
            min_pts = int(rng.integers(1, 6))
            self.assertEqual(dbscan(points, eps, min_pts).labels, brute_force_dbscan(points, eps, min_pts))

    def test_partition_invariant_under_reordering(self) -> None:
        rng = np.random.default_rng(8)
        points = np.concatenate([rng.normal(0, 0.3, 10), rng.normal(10, 0.3, 10)])
        order = rng.permutation(len(points))
        original = dbscan(points, 1.5, 3)
        shuffled = dbscan(points[order], 1.5, 3)
        restored = [0] * len(points)
        for position, index in enumerate(order):
            restored[index] = shuffled.labels[position]
        self.assertEqual(adjusted_rand_index(original.labels, restored), 1.0)


class AdjustedRandIndexTests(SimpleTestCase):
    def test_permutation_invariance(self) -> None:
        self.assertEqual(adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]), 1.0)

    def test_hand_computed_negative_case(self) -> None:
        self.assertAlmostEqual(adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]), -0.5, places=12)
        self.assertAlmostEqual(contingency_ari([0, 0, 1, 1], [0, 1, 0, 1]), -0.5, places=12)

    def test_identical_singletons(self) -> None:
        self.assertEqual(adjusted_rand_index(Clustering((0, 1, 2, 3)), Clustering((0, 1, 2, 3))), 1.0)

    def test_length_mismatch(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            adjusted_rand_index([0, 1], [0, 1, 1])

    def test_matches_contingency_table(self) -> None:
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            a = rng.integers(-1, 4, n).tolist()
            b = rng.integers(-1, 4, n).tolist()
            self.assertAlmostEqual(adjusted_rand_index(a, b), contingency_ari(a, b), places=9)

    @given(st.lists(st.tuples(st.integers(-1, 3), st.integers(-1, 3)), min_size=2, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_symmetric(self, pairs) -> None:
        a = [left for left, _ in pairs]
        b = [right for _, right in pairs]
        self.assertEqual(adjusted_rand_index(a, b), adjusted_rand_index(b, a))

    def test_random_labelings_center_on_zero(self) -> None:
        rng = np.random.default_rng(2)
        fixed = rng.integers(0, 3, 40)
        scores = [adjusted_rand_index(fixed, rng.integers(0, 3, 40)) for _ in range(1000)]
        self.assertLess(abs(float(np.mean(scores))), 0.05)

    def test_aggregations(self) -> None:
        a, b, c = Clustering((0, 0, 1, 1)), Clustering((1, 1, 0, 0)), Clustering((0, 1, 0, 1))
        self.assertAlmostEqual(consecutive_ari([a, b, c]), (1.0 - 0.5) / 2)
        self.assertAlmostEqual(all_to_all_ari([a, b, c]), (1.0 - 0.5 - 0.5) / 3)
        self.assertIsNone(all_to_all_ari([a]))


class ClusterDistanceTests(SimpleTestCase):
    def test_two_clusters(self) -> None:
        result = cluster_distances([0, 2, 10, 12], Clustering((0, 0, 1, 1)))
        self.assertEqual(result, ClusterDistances(intra=2.0, inter=10.0, inter_defined=True))

    def test_single_point_cluster(self) -> None:
        result = cluster_distances([4.0], Clustering((0,)))
        self.assertEqual(result.intra, 0.0)
        self.assertEqual(result.inter, 0.0)
        self.assertFalse(result.inter_defined)

    def test_noise_excluded(self) -> None:
        result = cluster_distances([0, 2, 10, 12, 100], Clustering((0, 0, 1, 1, -1)))
        self.assertEqual((result.intra, result.inter), (2.0, 10.0))

    def test_all_noise_rejected(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            cluster_distances([1, 2], Clustering((-1, -1)))


def _window(rng, groups, dimension=8, noise=0.5):
    rows, ids = [], []
    for mean, count in groups:
        for _ in range(count):
            ids.append(f"w{len(ids)}")
            rows.append(rng.normal(mean, noise, dimension))
    return TraceWindow(tuple(ids), np.vstack(rows))


class FormTwoClustersTests(SimpleTestCase):
    def test_fast_slow_and_outlier(self) -> None:
        window = _window(np.random.default_rng(1), [(25, 6), (40, 6), (200, 1)])
        result = form_two_clusters(window, eps=10.0, min_pts=2)
        self.assertEqual(result.fast.size, 6)
        self.assertEqual(result.slow.size, 6)
        self.assertEqual(result.outliers, ('w12',))
        self.assertAlmostEqual(result.fast.model.early.mean, 25, delta=1.5)
        self.assertAlmostEqual(result.slow.model.late.mean, 40, delta=1.5)
        self.assertEqual(result.fast.role, Role.FAST)
        self.assertEqual(result.role_of('w12'), Role.OUTLIER)
        self.assertEqual(result.fast.size + result.slow.size + len(result.outliers), len(window))

    def test_identical_runtimes_are_degenerate(self) -> None:
        window = TraceWindow(tuple(f"w{i}" for i in range(6)), np.full((6, 5), 25.0))
        with self.assertRaises(ClusteringDegenerateError):
            form_two_clusters(window)
        with self.assertRaises(ClusteringDegenerateError):
            form_two_clusters(window, eps=1.0, min_pts=2)

    def test_equal_means_tie_goes_to_lower_cluster_id(self) -> None:
        points = np.array([[20.0, 30.0], [20.0, 30.0], [30.0, 20.0], [30.0, 20.0]])
        window = TraceWindow(('a', 'b', 'c', 'd'), points)
        result = form_two_clusters(window, eps=1.0, min_pts=2)
        self.assertEqual(result.fast.cluster_id, 0)
        self.assertEqual(result.fast.members, ('a', 'b'))

    def test_extra_clusters_become_outliers(self) -> None:
        window = _window(np.random.default_rng(3), [(25, 5), (40, 4), (60, 2)])
        result = form_two_clusters(window, eps=6.0, min_pts=2)
        self.assertEqual((result.fast.size, result.slow.size), (5, 4))
        self.assertEqual(len(result.outliers), 2)

    def test_local_samples_add_local_components(self) -> None:
        window = _window(np.random.default_rng(4), [(25, 4), (40, 4)])
        local = {worker_id: [5.0, 6.0, 9.0, 10.0] for worker_id in window.worker_ids}
        result = form_two_clusters(window, eps=10.0, min_pts=2, local_samples=local)
        self.assertTrue(result.fast.model.has_local)
        self.assertEqual(result.fast.model.validation_errors(), [])

    def test_needs_two_workers(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            form_two_clusters(TraceWindow(('solo',), np.ones((1, 3))))

    def test_default_parameters(self) -> None:
        window = TraceWindow(tuple(f"w{i}" for i in range(60)), np.tile([[0.0], [2.0]], (30, 4)))
        eps, min_pts = default_dbscan_params(window)
        self.assertAlmostEqual(eps, 0.5 * 1.0 * 2.0)
        self.assertEqual(min_pts, 3)

    def test_widening_recovers_from_all_noise(self) -> None:
        points = [25.0, 25.5, 26.0, 26.5, 27.0, 40.0, 40.5, 41.0, 41.5, 42.0]
        window = TraceWindow(tuple(f"w{i}" for i in range(10)), points)
        result = form_two_clusters_widening(window, eps=0.15, min_pts=2)
        self.assertEqual((result.fast.size, result.slow.size), (5, 5))
        self.assertAlmostEqual(result.eps, 0.6)

    def test_widening_gives_up(self) -> None:
        window = TraceWindow(tuple(f"w{i}" for i in range(4)), np.full((4, 3), 9.0))
        with self.assertRaises(ClusteringDegenerateError):
            form_two_clusters_widening(window, eps=1.0, min_pts=2, retries=3)


class ClusterQualityReportTests(SimpleTestCase):
    def test_windows_and_k_targeting(self) -> None:
        drift = np.linspace(0.0, 1.0, 40)
        runtimes = np.vstack([np.tile(base + drift, (5, 1)) for base in (25.0, 40.0, 70.0)])
        ids = [f"w{i}" for i in range(15)]
        self.assertEqual(len(sliding_windows(ids, runtimes, 10, 2)), 4)
        clustering = cluster_with_k(TraceWindow(tuple(ids), runtimes[:, :10]), 3)
        self.assertIsNotNone(clustering)
        self.assertEqual(clustering.num_clusters, 3)

        rows = cluster_quality_report(ids, runtimes, window=10, overlap=2, ks=(3,))
        self.assertEqual(rows[0].k, 3)
        self.assertEqual(rows[0].windows, 4)
        self.assertAlmostEqual(rows[0].ari_all_to_all, 1.0)
        self.assertAlmostEqual(rows[0].ari_consecutive, 1.0)
        self.assertGreater(rows[0].inter, rows[0].intra)

    def test_invalid_window(self) -> None:
        with self.assertRaises(ClusteringDomainError):
            sliding_windows(['a'], np.ones((1, 5)), 3, 3)
