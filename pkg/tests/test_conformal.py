"""Split-conformal machinery: scores, quantile rule, calibration, K
selection, and region serialization."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confopt.conformal import (
    BallUnionScore,
    BoxScore,
    CalibratedRegion,
    ConditionalBoxScore,
    ConditionalEllipsoidScore,
    EllipsoidScore,
    calibrate,
    conformal_quantile,
    gpcp_score,
    point_key,
    region_from_json,
    region_to_dict,
    region_to_json,
    select_k,
)
from confopt.samplers import BimodalGaussianSampler, GaussianLinearSampler


class DiracSampler:
    """Deterministic conditional 'sampler': every draw is x scaled by half."""

    dim_x = 2
    dim_c = 2

    def sample(self, x, n, rng):
        return np.tile(0.5 * np.asarray(x, dtype=float), (n, 1))


class SignModesSampler:
    """Outcomes at (+5, 0) or (-5, 0) with equal odds, plus tiny jitter.

    The context carries no information, so conditional draws miss the
    realized mode half the time each.
    """

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


class TestQuantileRule:
    def test_rank_arithmetic(self):
        scores = np.arange(1.0, 11.0)
        # n=10: rank ceil(11 * 0.95) = 11 > n, so the threshold is +inf.
        assert conformal_quantile(scores, 0.05) == math.inf
        # rank ceil(11 * 0.9) = 10 -> largest score.
        assert conformal_quantile(scores, 0.10) == 10.0
        # rank ceil(11 * 0.5) = 6 -> sixth smallest.
        assert conformal_quantile(scores, 0.50) == 6.0

    def test_unsorted_input(self):
        assert conformal_quantile(np.array([3.0, 1.0, 2.0]), 0.25) == 3.0

    def test_validation(self):
        with pytest.raises(ValueError):
            conformal_quantile(np.array([]), 0.1)
        with pytest.raises(ValueError):
            conformal_quantile(np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            conformal_quantile(np.array([1.0]), 1.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0.01, 0.99))
    def test_permutation_invariant_and_achieved(self, values, alpha):
        scores = np.array(values)
        q = conformal_quantile(scores, alpha)
        rng = np.random.default_rng(0)
        assert conformal_quantile(rng.permutation(scores), alpha) == q
        assert q == math.inf or q in scores

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30))
    def test_monotone_in_alpha(self, values):
        scores = np.array(values)
        qs = [conformal_quantile(scores, a) for a in (0.05, 0.2, 0.5, 0.8)]
        assert all(qs[i] >= qs[i + 1] for i in range(len(qs) - 1))


class TestGpcpScore:
    def test_min_distance(self):
        centers = np.array([[0.0, 0.0], [4.0, 0.0]])
        assert gpcp_score(centers, np.array([3.0, 0.0])) == pytest.approx(1.0)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 4))
    @settings(max_examples=40)
    def test_matches_brute_force(self, seed, k, dim):
        rng = np.random.default_rng(seed)
        centers = rng.normal(size=(k, dim))
        c = rng.normal(size=dim)
        want = min(np.linalg.norm(c - row) for row in centers)
        assert gpcp_score(centers, c) == pytest.approx(want, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            gpcp_score(np.zeros((0, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            gpcp_score(np.zeros((2, 2)), np.zeros(3))


class TestPointKey:
    def test_deterministic_and_distinct(self):
        a = np.array([1.0, 2.0])
        assert point_key(a) == point_key(a.copy())
        assert point_key(a) != point_key(np.array([1.0, 2.000001]))
        assert 0 <= point_key(a) < 2**64


class TestBallUnionScore:
    def test_centers_cached_and_seeded(self):
        sampler = GaussianLinearSampler(dim=3)
        x = np.array([0.5, -0.2, 1.0])
        score_a = BallUnionScore(sampler, k=4, seed=11)
        score_b = BallUnionScore(sampler, k=4, seed=11)
        np.testing.assert_array_equal(score_a.centers(x), score_a.centers(x))
        np.testing.assert_array_equal(score_a.centers(x), score_b.centers(x))
        score_c = BallUnionScore(sampler, k=4, seed=12)
        assert not np.array_equal(score_a.centers(x), score_c.centers(x))

    def test_draw_count_enforced(self):
        class Short:
            def sample(self, x, n, rng):
                return np.zeros((n - 1, 2))

        with pytest.raises(ValueError):
            BallUnionScore(Short(), k=3, seed=0).centers(np.zeros(2))

    def test_k_validation(self):
        with pytest.raises(ValueError):
            BallUnionScore(GaussianLinearSampler(dim=2), k=0, seed=0)


class TestBaselineScores:
    def test_box_fit_hand_case(self):
        # One column runs 0..10: median 5, deciles 1 and 9, scale 4.
        col = np.arange(11.0)
        c_train = np.column_stack([col, np.full(11, 2.0)])
        score = BoxScore.fit(c_train)
        np.testing.assert_allclose(score.center, [5.0, 2.0])
        assert score.scales[0] == pytest.approx(4.0)
        assert score.scales[1] == pytest.approx(BoxScore.SCALE_FLOOR)
        assert score.evaluate(None, np.array([9.0, 2.0])) == pytest.approx(1.0)

    def test_ellipsoid_fit_hand_case(self):
        c_train = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        score = EllipsoidScore.fit(c_train)
        np.testing.assert_allclose(score.center, [0.0, 0.0], atol=1e-15)
        # Unbiased covariance is (2/3) I; the ridge is ~7e-7.
        assert score.evaluate(None, np.array([1.0, 0.0])) == pytest.approx(math.sqrt(1.5), abs=1e-5)

    def test_conditional_box_recenters(self):
        sampler = DiracSampler()
        score = ConditionalBoxScore(sampler, k=3, seed=0, scales=np.array([2.0, 2.0]))
        x = np.array([4.0, -2.0])
        np.testing.assert_allclose(score.center_for(x), [2.0, -1.0])
        assert score.evaluate(x, np.array([2.0, -1.0])) == 0.0
        assert score.evaluate(x, np.array([3.0, -1.0])) == pytest.approx(0.5)

    def test_conditional_ellipsoid_needs_two_draws(self):
        with pytest.raises(ValueError):
            ConditionalEllipsoidScore(GaussianLinearSampler(dim=2), k=1, seed=0)

    def test_conditional_ellipsoid_moments(self):
        sampler = GaussianLinearSampler(dim=2)
        score = ConditionalEllipsoidScore(sampler, k=50, seed=5)
        x = np.array([1.0, 1.0])
        mean, cov = score.moments_for(x)
        draws = sampler.sample(x, 50, np.random.default_rng([5, point_key(x)]))
        np.testing.assert_allclose(mean, draws.mean(axis=0))
        # Score at the conditional mean is zero.
        assert score.evaluate(x, mean) == 0.0
        assert cov.shape == (2, 2)


class TestCalibration:
    def test_threshold_is_calibration_quantile(self, rng):
        sampler = GaussianLinearSampler(dim=2)
        score = BallUnionScore(sampler, k=3, seed=1)
        x_cal, c_cal = sampler.sample_joint(40, rng)
        region = calibrate(score, x_cal, c_cal, alpha=0.2)
        scores = np.array([score.evaluate(x, c) for x, c in zip(x_cal, c_cal)])
        assert region.q_hat == conformal_quantile(scores, 0.2)
        assert region.n_cal == 40
        assert region.lineage == {"calibration": "cal1"}

    def test_contains_matches_score(self, rng):
        sampler = GaussianLinearSampler(dim=2)
        score = BallUnionScore(sampler, k=3, seed=1)
        x_cal, c_cal = sampler.sample_joint(60, rng)
        region = calibrate(score, x_cal, c_cal, alpha=0.2)
        x, c = sampler.sample_joint(1, rng)
        want = score.evaluate(x[0], c[0]) <= region.q_hat
        assert region.contains(x[0], c[0]) == want

    def test_small_calibration_set_gives_inf(self, rng):
        sampler = GaussianLinearSampler(dim=2)
        x_cal, c_cal = sampler.sample_joint(5, rng)
        region = calibrate(BallUnionScore(sampler, 2, 0), x_cal, c_cal, alpha=0.05)
        assert region.q_hat == math.inf
        assert region.contains(np.zeros(2), np.array([1e9, -1e9]))

    def test_marginal_coverage_over_splits(self):
        # Split-conformal guarantee: averaged over many fresh splits,
        # coverage sits in [1 - a, 1 - a + 1/(n_cal + 1)] up to noise.
        sampler = GaussianLinearSampler(dim=2)
        alpha, n_cal, n_test, n_splits = 0.2, 80, 120, 60
        rates = []
        for split in range(n_splits):
            rng = np.random.default_rng([77, split])
            x_cal, c_cal = sampler.sample_joint(n_cal, rng)
            x_test, c_test = sampler.sample_joint(n_test, rng)
            region = calibrate(BallUnionScore(sampler, 4, seed=split), x_cal, c_cal, alpha)
            rates.append(region.coverage(x_test, c_test))
        rates = np.asarray(rates)
        se = rates.std(ddof=1) / math.sqrt(n_splits)
        assert rates.mean() >= 1 - alpha - 2 * se
        assert rates.mean() <= 1 - alpha + 1 / (n_cal + 1) + 2 * se

    def test_coverage_validation(self):
        region = CalibratedRegion(BoxScore(np.zeros(1), np.ones(1)), 0.1, 1.0, 10)
        with pytest.raises(ValueError):
            region.coverage(np.zeros((0, 1)), np.zeros((0, 1)))


class TestSelectK:
    def test_degenerate_sampler_converges_at_one(self):
        # Every K produces the same single center, so the volume curve is
        # flat and the smallest K wins.
        sampler = DiracSampler()
        rng = np.random.default_rng(3)
        x_cal = rng.normal(size=(30, 2))
        c_cal = 0.5 * x_cal + rng.normal(scale=0.1, size=(30, 2))
        x_vol = rng.normal(size=(10, 2))
        sel = select_k(sampler, x_cal, c_cal, x_vol, alpha=0.2, k_max=4, n_per_ball=200, seed=0)
        assert sel.k_star == 1
        assert sel.converged
        assert np.allclose(sel.volumes, sel.volumes[0])

    def test_rejects_overlapping_splits(self):
        sampler = DiracSampler()
        rng = np.random.default_rng(4)
        x = rng.normal(size=(20, 2))
        c = rng.normal(size=(20, 2))
        with pytest.raises(ValueError, match="disjoint"):
            select_k(sampler, x, c, x[:5], alpha=0.2, k_max=2, n_per_ball=50)

    def test_audit_lists_split_keys(self):
        sampler = DiracSampler()
        rng = np.random.default_rng(5)
        x_cal = rng.normal(size=(25, 2))
        c_cal = rng.normal(size=(25, 2))
        x_vol = rng.normal(size=(8, 2))
        sel = select_k(sampler, x_cal, c_cal, x_vol, alpha=0.2, k_max=2, n_per_ball=50, seed=1)
        assert len(sel.audit["calibration_points"]) == 25
        assert len(sel.audit["volume_points"]) == 8
        assert not set(sel.audit["calibration_points"]) & set(sel.audit["volume_points"])

    def test_volume_drops_once_k_covers_both_modes(self):
        # Outcomes sit at +/- m with equal odds.  A wrong-sign draw costs
        # a distance of 2|m|, and with K draws all K miss the right mode
        # with probability 2^-K, so at alpha=0.1 the threshold collapses
        # from ~2|m| to the within-mode scale once 2^-K < alpha-ish.
        sampler = SignModesSampler()
        rng = np.random.default_rng(6)
        x_cal, c_cal = sampler.sample_joint(200, rng)
        x_vol, _ = sampler.sample_joint(30, rng)
        sel = select_k(sampler, x_cal, c_cal, x_vol, alpha=0.1, k_max=5, n_per_ball=400, seed=2)
        assert sel.q_hats[0] > 9.0
        assert sel.q_hats[4] < 1.0
        assert sel.volumes[4] < 0.05 * sel.volumes[0]

    def test_unselectable_curve_reports_not_converged(self):
        sampler = BimodalGaussianSampler()
        rng = np.random.default_rng(7)
        x_cal, c_cal = sampler.sample_joint(120, rng)
        x_vol, _ = sampler.sample_joint(30, rng)
        sel = select_k(sampler, x_cal, c_cal, x_vol, alpha=0.1, k_max=2, n_per_ball=300, seed=3, epsilon=1e-12)
        assert sel.k_star == 2
        assert not sel.converged


class TestSerialization:
    def _make_regions(self):
        sampler = GaussianLinearSampler(dim=2)
        rng = np.random.default_rng(8)
        x_cal, c_cal = sampler.sample_joint(30, rng)
        c_train = sampler.sample_joint(40, rng)[1]
        scores = [
            BallUnionScore(sampler, 3, seed=4),
            BoxScore.fit(c_train),
            EllipsoidScore.fit(c_train),
            ConditionalBoxScore.fit(sampler, 3, 4, c_train),
            ConditionalEllipsoidScore(sampler, 3, 4),
        ]
        return sampler, [calibrate(s, x_cal, c_cal, alpha=0.2) for s in scores]

    def test_round_trip_is_byte_exact(self):
        sampler, regions = self._make_regions()
        for region in regions:
            text = region_to_json(region)
            loaded = region_from_json(text, sampler=sampler)
            assert region_to_json(loaded) == text
            assert loaded.q_hat == region.q_hat
            assert loaded.score.kind == region.score.kind

    def test_round_trip_preserves_membership(self, rng):
        sampler, regions = self._make_regions()
        x_test, c_test = sampler.sample_joint(25, rng)
        for region in regions:
            loaded = region_from_json(region_to_json(region), sampler=sampler)
            for x, c in zip(x_test, c_test):
                assert loaded.contains(x, c) == region.contains(x, c)

    def test_infinite_threshold_serializes(self):
        sampler = GaussianLinearSampler(dim=2)
        rng = np.random.default_rng(9)
        x_cal, c_cal = sampler.sample_joint(4, rng)
        region = calibrate(BallUnionScore(sampler, 2, 0), x_cal, c_cal, alpha=0.05)
        doc = region_to_dict(region)
        assert doc["q_hat"] == "inf"
        loaded = region_from_json(region_to_json(region), sampler=sampler)
        assert loaded.q_hat == math.inf

    def test_sampler_required_for_conditional_kinds(self):
        sampler, regions = self._make_regions()
        cpo = next(r for r in regions if r.score.kind == "CPO")
        with pytest.raises(ValueError, match="sampler"):
            region_from_json(region_to_json(cpo))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="score kind"):
            region_from_json(json.dumps({"score_kind": "Cube", "payload": {}}))
