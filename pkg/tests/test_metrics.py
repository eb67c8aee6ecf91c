import numpy as np
import pytest
import scipy.stats

from srsw_calib import (
    bias,
    central_point,
    ensemble_mean_relative_l2,
    ensemble_spread,
    point_series,
    rank_histogram,
    rank_histogram_from_run,
    relative_l2,
    rmse,
    time_average_table,
)
from srsw_calib.errors import FieldError


class TestBias:
    def test_perfect_ensemble(self):
        m = np.ones((4, 6))
        np.testing.assert_array_equal(bias(m, np.ones(6)), 0.0)

    def test_symmetric_members_cancel(self):
        t = np.array([2.0, -1.0])
        m = np.stack([t + 1.0, t - 1.0])
        np.testing.assert_array_equal(bias(m, t), 0.0)

    def test_simple_arithmetic(self):
        m = np.array([[3.0], [5.0]])
        assert bias(m, np.array([3.0]))[0] == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(FieldError):
            bias(np.zeros((0, 5)), np.zeros(5))


class TestRmse:
    def test_perfect_ensemble(self):
        m = np.full((7, 3), 2.5)
        np.testing.assert_array_equal(rmse(m, np.full(3, 2.5)), 0.0)

    def test_simple_arithmetic(self):
        m = np.array([[3.0], [5.0]])
        assert rmse(m, np.array([3.0]))[0] == pytest.approx(np.sqrt(2.0))

    def test_decomposition_identity(self, rng):
        # rmse^2 = bias^2 + population variance of the members
        m = rng.normal(size=(40, 25))
        t = rng.normal(size=25)
        total = rmse(m, t) ** 2
        decomposed = bias(m, t) ** 2 + m.var(axis=0, ddof=0)
        np.testing.assert_allclose(total, decomposed, rtol=1e-12)

    def test_dominates_bias(self, rng):
        m = rng.normal(size=(30, 50))
        t = rng.normal(size=50)
        assert np.all(rmse(m, t) >= np.abs(bias(m, t)) - 1e-14)

    def test_shift_invariance(self, rng):
        m = rng.normal(size=(12, 9))
        t = rng.normal(size=9)
        np.testing.assert_allclose(rmse(m + 3.7, t + 3.7), rmse(m, t), rtol=1e-12)


class TestRelativeL2:
    def test_perfect_member(self, rng):
        t = rng.normal(size=(8, 6))
        assert relative_l2(t, t) == 0.0

    def test_double_truth(self, rng):
        t = rng.normal(size=(8, 6))
        assert relative_l2(2.0 * t, t) == pytest.approx(1.0)

    def test_matches_two_loop_evaluation(self, rng):
        x = rng.normal(size=(5, 4))
        t = rng.normal(size=(5, 4))
        num = 0.0
        den = 0.0
        for i in range(5):
            for j in range(4):
                num += (x[i, j] - t[i, j]) ** 2
                den += t[i, j] ** 2
        assert relative_l2(x, t) == pytest.approx(np.sqrt(num / den), rel=1e-14)

    def test_joint_scale_invariance(self, rng):
        x = rng.normal(size=(5, 4))
        t = rng.normal(size=(5, 4))
        assert relative_l2(3.3 * x, 3.3 * t) == pytest.approx(
            relative_l2(x, t), rel=1e-13
        )

    def test_zero_norm_truth_rejected(self):
        with pytest.raises(FieldError, match="undefined"):
            relative_l2(np.ones((3, 3)), np.zeros((3, 3)))


class TestSpread:
    def test_identical_members(self):
        np.testing.assert_array_equal(ensemble_spread(np.full((5, 4), 2.0)), 0.0)

    def test_two_member_example(self):
        m = np.array([[-1.0], [1.0]])
        assert ensemble_spread(m)[0] == pytest.approx(np.sqrt(2.0))

    def test_hundred_member_chi_square_band(self, rng):
        m = rng.normal(size=(100, 1))
        assert 0.8 < ensemble_spread(m)[0] < 1.2

    def test_constant_shift_invariance(self, rng):
        m = rng.normal(size=(20, 7))
        np.testing.assert_allclose(
            ensemble_spread(m + 11.0), ensemble_spread(m), rtol=1e-12
        )

    def test_single_member_rejected(self):
        with pytest.raises(FieldError):
            ensemble_spread(np.ones((1, 4)))


class TestRankHistogram:
    def test_truth_below_everything(self):
        m = np.ones((10, 25))
        t = np.zeros(25)
        hist = rank_histogram(m, t)
        assert hist.counts[0] == 25
        assert hist.counts[1:].sum() == 0
        assert hist.n_samples == 25

    def test_exchangeable_truth_uniform(self, rng):
        n_p, n_t = 10, 10000
        m = rng.normal(size=(n_p, n_t))
        t = rng.normal(size=n_t)
        hist = rank_histogram(m, t, rng)
        expected = n_t / (n_p + 1)
        stat = ((hist.counts - expected) ** 2 / expected).sum()
        crit = scipy.stats.chi2.ppf(0.99, df=n_p)
        assert stat < crit

    def test_median_truth_concentrates_centrally(self, rng):
        n_p, n_t = 10, 64
        m = rng.normal(size=(n_p, n_t))
        t = np.median(m, axis=0)
        hist = rank_histogram(m, t, rng)
        assert hist.counts[4] + hist.counts[5] + hist.counts[6] == n_t
        assert hist.counts[0] == hist.counts[-1] == 0

    def test_ties_randomized_uniformly(self, rng):
        m = np.zeros((4, 6000))
        t = np.zeros(6000)
        hist = rank_histogram(m, t, rng)
        # truth tied with all four members: rank uniform over 0..4
        assert hist.counts.min() > 0.8 * 6000 / 5
        assert hist.counts.max() < 1.2 * 6000 / 5

    def test_counts_sum_to_samples(self, rng):
        m = rng.normal(size=(7, 321))
        t = rng.normal(size=321)
        hist = rank_histogram(m, t, rng)
        assert hist.counts.sum() == hist.n_samples == 321


class TestRunLevelHelpers:
    @pytest.fixture
    def toy_run(self, rng, params):
        from srsw_calib import GridSpec, empty_basis, run_ensemble
        from conftest import random_state

        grid = GridSpec(1.6e6, 0.8e6, 8, 4)
        st = random_state(grid, rng, amp_v=0.02, amp_e=0.5)
        truth = run_ensemble(st, params, empty_basis(grid), 6, 30.0, 1, 0).members[0]
        return run_ensemble(
            st, params, empty_basis(grid), 6, 30.0, 3, 1, truth=truth
        )

    def test_point_series_shapes(self, toy_run):
        ps = point_series(toy_run, "eta", (4, 2))
        assert ps.members.shape == (3, 7)
        assert ps.truth.shape == (7,)
        assert ps.location == (4, 2)

    def test_zero_noise_run_bias_is_model_discrepancy(self, toy_run):
        ps = point_series(toy_run, "eta", (4, 2))
        # members equal the truth trajectory here, so all metrics vanish
        np.testing.assert_allclose(bias(ps.members, ps.truth), 0.0, atol=1e-15)
        np.testing.assert_allclose(rmse(ps.members, ps.truth), 0.0, atol=1e-15)

    def test_relative_l2_series_zero_for_identical(self, toy_run):
        series = ensemble_mean_relative_l2(toy_run, "eta")
        np.testing.assert_allclose(series, 0.0, atol=1e-15)

    def test_rank_histogram_from_run_counts(self, toy_run, rng):
        hist = rank_histogram_from_run(toy_run, (4, 2), "eta", 6, rng)
        assert hist.n_samples == 6
        assert hist.counts.sum() == 6

    def test_time_average_table_layout(self, toy_run):
        rows = time_average_table({"demo": toy_run})
        assert len(rows) == 3
        assert {r["variable"] for r in rows} == {"eta", "u", "v"}
        for r in rows:
            assert r["scenario"] == "demo"
            assert r["mean_bias"] == pytest.approx(0.0, abs=1e-14)
            assert r["mean_rmse"] == pytest.approx(0.0, abs=1e-14)

    def test_central_point(self):
        assert central_point((278, 40)) == (139, 20)
        assert central_point((139, 20)) == (69, 10)
