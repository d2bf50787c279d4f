"""K-means: seeding distribution, Lloyd invariants, recovery on easy data."""

import numpy as np
import pytest

from icclab import episodes as epi
from icclab.baselines import (
    KMeansConfig,
    TooFewPoints,
    kmeans,
    kmeans_labeler,
    kmeans_pp_init,
    lloyd,
    oracle_labeler,
)
from icclab.evaluation import clustering_accuracy


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            KMeansConfig(k=0)
        with pytest.raises(ValueError):
            KMeansConfig(k=2, restarts=0)


class TestPlusPlusInit:
    def test_k_equals_m_is_permutation(self):
        rng = np.random.default_rng(0)
        points = rng.normal(size=(6, 2))
        cents = kmeans_pp_init(points, 6, np.random.default_rng(1))
        assert sorted(map(tuple, cents)) == sorted(map(tuple, points))

    def test_duplicate_points_force_distinct_second(self):
        p, q = [0.0, 0.0], [5.0, 5.0]
        points = np.array([p, p, q])
        for seed in range(20):
            cents = kmeans_pp_init(points, 2, np.random.default_rng(seed))
            assert sorted(map(tuple, cents)) == sorted(map(tuple, [p, q])) or (
                tuple(cents[0]) == tuple(q)
            )
            # whichever came first, both locations are covered
            assert {tuple(c) for c in cents} == {tuple(p), tuple(q)}

    def test_all_identical_points_fall_back_to_uniform(self):
        points = np.zeros((4, 2))
        cents = kmeans_pp_init(points, 3, np.random.default_rng(0))
        assert cents.shape == (3, 2)
        assert np.all(cents == 0.0)

    def test_separated_triples_each_contribute_one_centroid(self):
        # Monte-Carlo: with triples 100 apart and jitter 0.1, a spread-out
        # seeding should pick one point per triple nearly always.
        rng = np.random.default_rng(42)
        centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
        points = np.concatenate([c + 0.1 * rng.normal(size=(3, 2)) for c in centers])
        hits = 0
        trials = 10_000
        for seed in range(trials):
            cents = kmeans_pp_init(points, 3, np.random.default_rng(seed))
            groups = {int(np.argmin(np.sum((centers - c) ** 2, axis=1))) for c in cents}
            hits += groups == {0, 1, 2}
        assert hits / trials >= 0.99

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans_pp_init(np.zeros((2, 2)), 3, np.random.default_rng(0))


class TestLloyd:
    def test_inertia_monotone_nonincreasing(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(60, 2)) + rng.integers(0, 3, size=(60, 1)) * 8
        init = kmeans_pp_init(points, 3, rng)
        _, _, _, history = lloyd(points, init)
        diffs = np.diff(history)
        assert np.all(diffs <= 1e-9)

    def test_assignment_optimal_at_convergence(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(40, 3))
        labels, centroids, _, _ = lloyd(points, kmeans_pp_init(points, 4, rng))
        d2 = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
        assert np.array_equal(labels, np.argmin(d2, axis=1))

    def test_empty_cluster_reseeded_to_farthest(self):
        points = np.array([[0.0], [0.1], [0.2], [10.0]])
        # third centroid starts far beyond any point and would stay empty
        init = np.array([[0.0], [0.2], [100.0]])
        labels, centroids, _, _ = lloyd(points, init)
        assert set(labels.tolist()) == {0, 1, 2}
        assert 10.0 in centroids


class TestKMeans:
    def test_two_points_two_clusters(self):
        points = np.array([[0.0, 0.0], [3.0, 4.0]])
        labels, centroids, inertia = kmeans(points, KMeansConfig(k=2))
        assert sorted(labels.tolist()) == [0, 1]
        assert inertia == 0.0
        assert sorted(map(tuple, centroids)) == sorted(map(tuple, points))

    def test_seed_determinism(self):
        rng = np.random.default_rng(5)
        points = rng.normal(size=(50, 2))
        a = kmeans(points, KMeansConfig(k=3, seed=7))
        b = kmeans(points, KMeansConfig(k=3, seed=7))
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert a[2] == b[2]

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans(np.zeros((2, 2)), KMeansConfig(k=3))

    def test_restarts_never_worse(self):
        rng = np.random.default_rng(6)
        points = np.concatenate([rng.normal(size=(20, 2)) + off for off in (0, 10, 20)])
        one = kmeans(points, KMeansConfig(k=3, restarts=1, seed=0))[2]
        ten = kmeans(points, KMeansConfig(k=3, restarts=10, seed=0))[2]
        assert ten <= one + 1e-12

    def test_every_cluster_nonempty(self):
        rng = np.random.default_rng(7)
        points = rng.normal(size=(30, 2))
        labels, _, _ = kmeans(points, KMeansConfig(k=5, seed=1))
        assert set(labels.tolist()) == set(range(5))


class TestRecovery:
    def test_well_separated_gaussian_episodes_recovered(self):
        # Episodes whose true centroids sit >= 8 apart on every axis are
        # easy; k-means should recover the exact partition nearly always.
        spec = epi.EpisodeSpec(num_clusters=2, dim=3, distribution=epi.STUDENT_T,
                               df=100.0, seed=13)
        qualifying = []
        i = 0
        while len(qualifying) < 100 and i < 6000:
            ep = epi.sample_episode(spec, epi.episode_rng(spec, i))
            i += 1
            gap = np.abs(ep.centroids[0] - ep.centroids[1])
            if np.all(gap >= 8.0):
                qualifying.append(ep)
        assert len(qualifying) == 100
        method = kmeans_labeler(seed=0)
        perfect = sum(
            clustering_accuracy(method(ep), ep.labels) == 1.0 for ep in qualifying
        )
        assert perfect >= 95

    def test_near_gaussian_table_cell_sanity(self):
        # Quick n=50 screen of the hardest-to-miss cell; the full grid is
        # covered by the acceptance suite.
        spec = epi.EpisodeSpec(num_clusters=3, dim=3, distribution=epi.STUDENT_T,
                               df=100.0, seed=2)
        eps = [epi.sample_episode(spec, epi.episode_rng(spec, i)) for i in range(50)]
        method = kmeans_labeler(seed=0)
        accs = [clustering_accuracy(method(ep), ep.labels) for ep in eps]
        assert 0.92 <= np.mean(accs) <= 1.0

    def test_oracle_labeler_is_identity(self):
        spec = epi.EpisodeSpec(num_clusters=2, dim=2, distribution=epi.GAUSSIAN, seed=3)
        ep = epi.sample_episode(spec, epi.episode_rng(spec, 0))
        assert np.array_equal(oracle_labeler()(ep), ep.labels)
