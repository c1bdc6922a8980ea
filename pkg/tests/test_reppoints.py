"""Representative points: union sampling, components, clustering,
allocation, dispersion, and the grid reference pipeline.

Component labels are checked against a brute-force all-pairs BFS, the
allocator against hand-rounded quotas, and k-means against cases whose
optimum is unambiguous.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from confopt.conformal import BallUnionScore, BoxScore, CalibratedRegion, calibrate
from confopt.exceptions import UnboundedRegionError
from confopt.reppoints import (
    RegionSample,
    allocate_counts,
    connected_components,
    grid_reference_rps,
    kmeans_pp,
    projection_variance,
    query_ball,
    region_rps,
    rp_suboptimality,
    sample_union_uniform,
    summarize_sample,
)


class TwoClusterSampler:
    """Outcomes near (+5, 0) or (-5, 0) with equal odds; x is uninformative."""

    dim_x = 1
    dim_c = 2
    mode = np.array([5.0, 0.0])

    def sample(self, x, n, rng):
        signs = rng.choice([-1.0, 1.0], size=n)
        return signs[:, None] * self.mode + rng.normal(scale=0.05, size=(n, 2))

    def sample_joint(self, n, rng):
        x = rng.normal(size=(n, 1))
        c = np.vstack([self.sample(xi, 1, rng)[0] for xi in x])
        return x, c


class JitterSampler:
    """Single-cluster conditional draws at x / 2 with fixed spread."""

    dim_x = 2
    dim_c = 2

    def sample(self, x, n, rng):
        return 0.5 * np.asarray(x, dtype=float) + 0.3 * rng.normal(size=(n, 2))

    def sample_joint(self, n, rng):
        x = rng.normal(size=(n, 2))
        c = np.vstack([self.sample(xi, 1, rng)[0] for xi in x])
        return x, c


def two_cluster_region(alpha=0.2, k=8, n_cal=120, seed=0):
    sampler = TwoClusterSampler()
    x_cal, c_cal = sampler.sample_joint(n_cal, np.random.default_rng(seed))
    return calibrate(BallUnionScore(sampler, k, seed=seed), x_cal, c_cal, alpha)


def brute_components(points, radius):
    """All-pairs BFS partition with the strict distance criterion."""
    n = len(points)
    adjacent = [
        [j for j in range(n) if j != i and np.linalg.norm(points[i] - points[j]) < radius]
        for i in range(n)
    ]
    seen = [False] * n
    parts = []
    for start in range(n):
        if seen[start]:
            continue
        queue, part = [start], set()
        seen[start] = True
        while queue:
            i = queue.pop()
            part.add(i)
            for j in adjacent[i]:
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
        parts.append(frozenset(part))
    return set(parts)


def labels_to_partition(labels):
    return {frozenset(np.flatnonzero(labels == v)) for v in np.unique(labels)}


class TestSampleUnionUniform:
    def test_disjoint_balls_keep_everything(self, rng):
        centers = np.array([[-5.0, 0.0], [5.0, 0.0]])
        sample = sample_union_uniform(centers, 1.0, 300, rng)
        assert sample.points.shape == (600, 2)
        np.testing.assert_array_equal(np.bincount(sample.source_ball), [300, 300])

    def test_ownership_and_membership(self, rng):
        centers = np.array([[0.0, 0.0], [0.6, 0.0], [0.0, 0.8]])
        sample = sample_union_uniform(centers, 1.0, 400, rng)
        dists = np.linalg.norm(sample.points[:, None, :] - centers[None, :, :], axis=2)
        np.testing.assert_array_equal(np.argmin(dists, axis=1), sample.source_ball)
        assert np.all(dists.min(axis=1) <= 1.0 + 1e-12)

    def test_coincident_balls_deduplicate_to_first(self, rng):
        centers = np.array([[1.0, 2.0], [1.0, 2.0]])
        sample = sample_union_uniform(centers, 0.5, 250, rng)
        # ties go to the lower index, so the second ball keeps nothing
        assert sample.points.shape[0] == 250
        assert set(sample.source_ball) == {0}

    def test_overlap_is_split_evenly(self, rng):
        # Symmetric two-ball overlap: the bisector x = 0.25 splits the
        # union's mass in half.
        centers = np.array([[0.0, 0.0], [0.5, 0.0]])
        sample = sample_union_uniform(centers, 1.0, 4000, rng)
        frac = float(np.mean(sample.points[:, 0] < 0.25))
        assert frac == pytest.approx(0.5, abs=0.03)

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            sample_union_uniform(np.zeros((0, 2)), 1.0, 10, rng)
        with pytest.raises(ValueError):
            sample_union_uniform(np.zeros((1, 2)), 1.0, 0, rng)
        with pytest.raises(ValueError):
            sample_union_uniform(np.zeros((1, 2)), 0.0, 10, rng)


class TestQueryBall:
    def test_matches_naive_scan(self, rng):
        points = rng.normal(size=(80, 3))
        tree = cKDTree(points)
        for _ in range(10):
            q = rng.normal(size=3)
            r = float(rng.uniform(0.2, 2.0))
            naive = [i for i in range(80) if np.linalg.norm(points[i] - q) <= r]
            assert query_ball(tree, q, r) == naive

    def test_negative_radius(self, rng):
        tree = cKDTree(rng.normal(size=(5, 2)))
        with pytest.raises(ValueError):
            query_ball(tree, np.zeros(2), -0.1)


class TestConnectedComponents:
    def test_hand_case_strict_threshold(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert connected_components(points, 1.0).tolist() == [0, 1]
        assert connected_components(points, 1.0 + 1e-9).tolist() == [0, 0]

    def test_chain_connects_transitively(self):
        points = np.array([[0.0], [0.9], [1.8], [5.0]])
        labels = connected_components(points, 1.0)
        assert labels.tolist() == [0, 0, 0, 1]

    def test_coarse_path_matches_brute_force(self):
        # above 2048 points the scan switches to the cell coarsening; the
        # labels must stay those of the strict pairwise graph
        rng = np.random.default_rng(3)
        points = np.concatenate([
            rng.normal([0.0, 0.0], 0.6, (900, 2)),
            rng.normal([3.0, 0.0], 0.6, (900, 2)),
            rng.normal([12.0, 0.0], 0.6, (800, 2)),
        ])
        for radius in (0.15, 0.6, 2.0):
            got = connected_components(points, radius)
            adjacent = cdist(points, points) < radius
            want = np.full(len(points), -1)
            for start in range(len(points)):
                if want[start] >= 0:
                    continue
                want[start] = want.max() + 1
                queue = [start]
                while queue:
                    reachable = np.flatnonzero(adjacent[queue.pop()] & (want < 0))
                    want[reachable] = want[start]
                    queue.extend(reachable.tolist())
            assert np.array_equal(got, want)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 40))
    @settings(max_examples=30, deadline=None)
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        points = rng.uniform(-1, 1, size=(n, 2))
        radius = float(rng.uniform(0.1, 1.0))
        labels = connected_components(points, radius)
        assert labels_to_partition(labels) == brute_components(points, radius)

    def test_labels_ordered_by_first_appearance(self, rng):
        points = rng.uniform(-1, 1, size=(60, 2))
        labels = connected_components(points, 0.3)
        first_seen = []
        for v in labels:
            if v not in first_seen:
                first_seen.append(v)
        assert first_seen == list(range(len(first_seen)))

    def test_validation(self):
        with pytest.raises(ValueError):
            connected_components(np.zeros((0, 2)), 1.0)
        with pytest.raises(ValueError):
            connected_components(np.zeros((3, 2)), 0.0)


class TestKMeans:
    def test_k_equals_n_is_identity(self, rng):
        points = rng.normal(size=(6, 2))
        centers, labels = kmeans_pp(points, 6, rng)
        assert sorted(labels.tolist()) == list(range(6))
        np.testing.assert_allclose(np.sort(centers, axis=0), np.sort(points, axis=0))

    def test_k_one_is_the_mean(self, rng):
        points = rng.normal(size=(20, 3))
        centers, labels = kmeans_pp(points, 1, rng)
        np.testing.assert_allclose(centers[0], points.mean(axis=0))
        assert set(labels) == {0}

    def test_separated_pairs_recover_cluster_means(self, rng):
        points = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
        centers, labels = kmeans_pp(points, 2, rng)
        got = centers[np.argsort(centers[:, 0])]
        np.testing.assert_allclose(got, [[0.05, 0.0], [10.05, 10.0]])
        assert labels[0] == labels[1] and labels[2] == labels[3] and labels[0] != labels[2]

    def test_deterministic_given_rng_state(self):
        points = np.random.default_rng(3).normal(size=(40, 2))
        a, _ = kmeans_pp(points, 4, np.random.default_rng(9))
        b, _ = kmeans_pp(points, 4, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_validation(self, rng):
        points = rng.normal(size=(4, 2))
        with pytest.raises(ValueError):
            kmeans_pp(points, 0, rng)
        with pytest.raises(ValueError):
            kmeans_pp(points, 5, rng)


class TestAllocateCounts:
    def test_largest_remainder_hand_case(self):
        # quotas (2.5, 1.5, 1.0): floors leave one seat, which the
        # index-ordered remainder tie sends to the first component.
        assert allocate_counts(np.array([5, 3, 2]), 5).tolist() == [3, 1, 1]

    def test_floor_of_one_per_component(self):
        # quotas (3.0, 1.5, 0.5) round to (3, 2, 0); the empty component
        # then takes one from the largest.
        assert allocate_counts(np.array([6, 3, 1]), 5).tolist() == [2, 2, 1]

    def test_capped_by_available_points(self):
        assert allocate_counts(np.array([2, 1]), 10).tolist() == [2, 1]

    @given(
        st.lists(st.integers(1, 50), min_size=1, max_size=6),
        st.integers(1, 60),
    )
    @settings(max_examples=200, deadline=None)
    def test_allocation_invariants(self, sizes, n_rp):
        sizes = np.array(sizes)
        counts = allocate_counts(sizes, n_rp)
        assert counts.sum() == min(n_rp, int(sizes.sum()))
        assert np.all(counts >= 0)
        assert np.all(counts <= sizes)
        if n_rp >= sizes.size:
            assert np.all(counts >= 1)

    def test_validation(self):
        with pytest.raises(ValueError):
            allocate_counts(np.array([3, 0]), 2)
        with pytest.raises(ValueError):
            allocate_counts(np.array([3]), 0)


class TestProjectionVariance:
    def test_hand_case(self):
        cell = np.array([[0.0, 0.0], [2.0, 0.0]])
        rp = np.array([1.0, 0.0])
        assert projection_variance(cell, rp, 0) == pytest.approx(2.0)
        assert projection_variance(cell, rp, 1) == 0.0

    def test_empty_cell(self):
        assert projection_variance(np.zeros((0, 2)), np.zeros(2), 0) == 0.0

    def test_axis_range(self):
        with pytest.raises(ValueError):
            projection_variance(np.zeros((1, 2)), np.zeros(2), 2)


class TestSummarizeSample:
    def _sample(self, seed=0):
        centers = np.array([[-4.0, 0.0], [4.0, 0.0]])
        return sample_union_uniform(centers, 1.0, 200, np.random.default_rng(seed))

    def test_summary_structure(self):
        sample = self._sample()
        summary = summarize_sample(sample, 4, seed=1)
        n = sample.points.shape[0]
        assert summary.rps.shape == (4, 2)
        # every representative is an actual region sample
        for rp in summary.rps:
            assert np.any(np.all(sample.points == rp, axis=1))
        # the cells partition the sample
        np.testing.assert_array_equal(
            np.sort(np.concatenate(summary.cells)), np.arange(n)
        )
        assert set(summary.components.tolist()) == {0, 1}

    def test_variances_match_recomputation(self):
        sample = self._sample(seed=2)
        summary = summarize_sample(sample, 3, seed=3)
        for i, cell in enumerate(summary.cells):
            for axis in range(2):
                want = projection_variance(sample.points[cell], summary.rps[i], axis)
                assert summary.projection_variances[i, axis] == pytest.approx(want)

    def test_to_dict_keys(self):
        summary = summarize_sample(self._sample(), 2)
        assert set(summary.to_dict()) == {"rps", "components", "projection_variances"}

    def test_connect_radius_merges_components(self):
        sample = self._sample()
        merged = summarize_sample(sample, 4, connect_radius=20.0)
        assert set(merged.components.tolist()) == {0}


class TestRegionRps:
    def test_two_cluster_region_gets_both_components(self):
        region = two_cluster_region()
        x = np.array([0.3])
        summary = region_rps(region, x, n_rp=4, n_per_ball=400, seed=0)
        assert summary.rps.shape == (4, 2)
        assert set(summary.components.tolist()) == {0, 1}
        # representatives are region members
        for rp in summary.rps:
            assert region.score.evaluate(x, rp) <= region.q_hat + 1e-12
        # the two mode clusters are split by sign
        signs = np.sign(summary.rps[:, 0])
        assert set(signs.tolist()) == {-1.0, 1.0}

    def test_connect_radius_override(self):
        region = two_cluster_region()
        summary = region_rps(region, np.array([0.3]), n_rp=4, n_per_ball=300, connect_radius=50.0)
        assert set(summary.components.tolist()) == {0}

    def test_deterministic_given_seed(self):
        region = two_cluster_region()
        x = np.array([-0.7])
        a = region_rps(region, x, n_rp=3, n_per_ball=200, seed=5)
        b = region_rps(region, x, n_rp=3, n_per_ball=200, seed=5)
        np.testing.assert_array_equal(a.rps, b.rps)
        np.testing.assert_array_equal(a.projection_variances, b.projection_variances)

    def test_rejects_non_union_scores(self, rng):
        c = rng.normal(size=(50, 2))
        region = calibrate(BoxScore.fit(c), c, c, alpha=0.2)
        with pytest.raises(TypeError):
            region_rps(region, np.zeros(2))

    def test_unbounded_region(self):
        region = two_cluster_region()
        bad = CalibratedRegion(region.score, region.alpha, math.inf, region.n_cal)
        with pytest.raises(UnboundedRegionError):
            region_rps(bad, np.array([0.0]))


class TestSuboptimality:
    def test_zero_at_equality(self, rng):
        rps = rng.normal(size=(4, 2))
        evals = rng.normal(size=(50, 2))
        assert rp_suboptimality(rps, rps, evals) == 0.0

    def test_hand_case(self):
        got = rp_suboptimality(
            np.array([[0.0, 0.0]]),
            np.array([[0.0, 0.0], [1.0, 0.0]]),
            np.array([[1.0, 0.0]]),
        )
        assert got == pytest.approx(1.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_superset_reference_never_negative_gap(self, seed):
        rng = np.random.default_rng(seed)
        candidate = rng.normal(size=(3, 2))
        extra = rng.normal(size=(2, 2))
        reference = np.vstack([candidate, extra])
        evals = rng.normal(size=(40, 2))
        assert rp_suboptimality(candidate, reference, evals) >= 0.0

    def test_empty_eval_points(self):
        with pytest.raises(ValueError):
            rp_suboptimality(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((0, 2)))


class TestGridReference:
    def _region(self, seed=0):
        sampler = JitterSampler()
        x_cal, c_cal = sampler.sample_joint(150, np.random.default_rng(seed))
        return calibrate(BallUnionScore(sampler, 4, seed=seed), x_cal, c_cal, alpha=0.1)

    def test_membership_and_count(self):
        region = self._region()
        x = np.array([0.4, -0.2])
        rps = grid_reference_rps(region, x, n_rp=3, bins=40)
        assert rps.shape == (3, 2)
        for rp in rps:
            assert region.score.evaluate(x, rp) <= region.q_hat + 1e-12

    def test_deterministic(self):
        region = self._region(seed=1)
        x = np.array([-0.5, 0.1])
        a = grid_reference_rps(region, x, n_rp=4, bins=30, seed=2)
        b = grid_reference_rps(region, x, n_rp=4, bins=30, seed=2)
        np.testing.assert_array_equal(a, b)

    def test_rejects_non_union_scores(self, rng):
        c = rng.normal(size=(40, 2))
        region = calibrate(BoxScore.fit(c), c, c, alpha=0.2)
        with pytest.raises(TypeError):
            grid_reference_rps(region, np.zeros(2), n_rp=2)
