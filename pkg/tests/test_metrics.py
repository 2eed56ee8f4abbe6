import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lshyper.metrics import (
    EmpiricalCdf,
    RelaxationHyper,
    analytic_score_wb,
    distance_correlation,
    distance_correlation_matrix,
    ensemble_stats,
    kde,
    log_density_wb,
    sample_wb,
    theoretical_stats,
    w1_distance,
    w1_over_time,
)

# brute-force double-centering value for x=(0,1,2,3), y=(0,1,0,1)
DCOR_ORACLE = 0.5266403878479267
HYPER = (-8.0, 0.8, 1.0, 0.1)

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=20)


class TestCdf:
    def test_terminal_weight_and_monotone(self):
        c = EmpiricalCdf.from_samples([3.0, 1.0, 1.0, 2.0])
        assert c.cumulative[-1] == 1.0
        assert np.all(np.diff(c.cumulative) > 0)
        np.testing.assert_allclose(c([0.0, 1.0, 1.5, 3.0]), [0.0, 0.5, 0.5, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalCdf.from_samples([])


class TestW1:
    def test_identical(self):
        assert w1_distance([1.0, 2.0, 5.0], [5.0, 1.0, 2.0]) == 0.0

    def test_point_masses(self):
        assert w1_distance([0.0], [1.0]) == 1.0

    def test_hand_integrated(self):
        assert w1_distance([0.0, 1.0], [0.0, 2.0]) == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            w1_distance([], [1.0])

    def test_equal_size_matches_sorted_matching(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(50), rng.standard_normal(50) + 1
        assert w1_distance(a, b) == pytest.approx(np.abs(np.sort(a) - np.sort(b)).mean(), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(samples, samples, samples)
    def test_metric_properties(self, a, b, c):
        ab, ba = w1_distance(a, b), w1_distance(b, a)
        assert ab >= 0
        assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)
        assert ab <= w1_distance(a, c) + w1_distance(c, b) + 1e-9

    def test_per_time(self):
        data = np.zeros((4, 3, 1))
        preds = np.ones((2, 1, 3, 1))
        preds[..., 0, :] = 0.0
        np.testing.assert_allclose(w1_over_time(preds, data), [0.0, 1.0, 1.0])
        np.testing.assert_allclose(w1_over_time(preds, data, np.array([False, True, True])), [1.0, 1.0])


class TestKde:
    def test_single_sample_is_normal_density(self):
        g = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(kde([0.0], g, 0.5), np.exp(-0.5 * (g / 0.5) ** 2) / (0.5 * np.sqrt(2 * np.pi)))

    def test_symmetric_samples_give_even_density(self):
        g = np.linspace(-4, 4, 81)
        d = kde([-1.0, 1.0], g, 0.7)
        np.testing.assert_allclose(d, d[::-1], atol=1e-12)

    def test_integrates_to_one(self):
        x = np.random.default_rng(0).standard_normal(300)
        g = np.linspace(-10, 10, 4001)
        assert np.trapezoid(kde(x, g), g) == pytest.approx(1.0, abs=1e-3)

    def test_scott_bandwidth_peak(self):
        x = np.random.default_rng(1).standard_normal(100_000)
        g = np.linspace(-0.5, 0.5, 41)
        assert kde(x, g).max() == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.03)

    def test_rejects_bad_bandwidth(self):
        with pytest.raises(ValueError):
            kde([0.0], [0.0], 0.0)


class TestDistanceCorrelation:
    def test_self(self):
        x = np.random.default_rng(0).standard_normal(30)
        assert distance_correlation(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_affine(self):
        x = np.random.default_rng(1).standard_normal(30)
        assert distance_correlation(x, 3.0 - 2.5 * x) == pytest.approx(1.0, abs=1e-10)

    def test_brute_force_oracle(self):
        assert distance_correlation([0, 1, 2, 3], [0, 1, 0, 1]) == pytest.approx(DCOR_ORACLE, rel=1e-12)

    def test_constant_inputs_give_zero(self):
        assert distance_correlation(np.ones(5), np.ones(5)) == 0.0

    def test_needs_four_samples(self):
        with pytest.raises(ValueError):
            distance_correlation([0, 1, 2], [0, 1, 2])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariant_to_similarity_maps(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((20, 2))
        y = x[:, :1] ** 2 + 0.3 * rng.standard_normal((20, 1))
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        base = distance_correlation(x, y)
        moved = distance_correlation(2.5 * x @ q + rng.standard_normal(2), -0.7 * y + 4.0)
        assert moved == pytest.approx(base, abs=1e-10)
        assert 0.0 <= base <= 1.0

    def test_matrix_shape(self):
        m = distance_correlation_matrix(np.random.default_rng(0).standard_normal((10, 3)))
        assert m.shape == (3, 3)
        np.testing.assert_allclose(np.diag(m), 1.0)
        np.testing.assert_allclose(m, m.T)


class TestEnsembleStats:
    def test_generator_samples_match_theory(self):
        w = sample_wb(100_000, np.random.default_rng(0))
        st_ = ensemble_stats(w)
        n = w.shape[0]
        assert abs(st_.mean[0] + 8.0) < 3 * 0.8 / np.sqrt(n)
        assert abs(st_.mean[1] - 8.0) < 3 * np.sqrt(1.2864 / n)
        assert st_.var[0] == pytest.approx(0.64, rel=3 * np.sqrt(2 / n) * 1.5)
        assert st_.var[1] == pytest.approx(1.29, abs=0.03)
        assert st_.rho == pytest.approx(-0.71, abs=0.01)

    def test_theory_values(self):
        t = theoretical_stats(RelaxationHyper())
        assert t["mean_W"] == -8.0 and t["mean_b"] == 8.0
        assert t["var_W"] == pytest.approx(0.64)
        assert t["var_b"] == pytest.approx(1.2864)
        assert t["cov_Wb"] == pytest.approx(-0.64)
        assert t["rho_Wb"] == pytest.approx(-0.71, abs=0.005)

    def test_constant_samples(self):
        st_ = ensemble_stats(np.ones((10, 2)))
        np.testing.assert_array_equal(st_.var, 0.0)

    def test_column_swap_transposes(self):
        w = np.random.default_rng(2).standard_normal((40, 2))
        a, b = ensemble_stats(w), ensemble_stats(w[:, ::-1])
        np.testing.assert_allclose(b.cov, a.cov[::-1, ::-1])

    def test_unbiased(self):
        w = np.array([[0.0], [2.0]])
        assert ensemble_stats(w).var[0] == 2.0


class TestAnalyticScore:
    def test_plug_in_values(self):
        dw, db = analytic_score_wb(-8.0, 8.0, *HYPER)
        assert db == 0.0
        assert dw == pytest.approx(0.125, abs=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        W = rng.uniform(-10, -6, 100)
        b = rng.uniform(6, 10, 100)
        dw, db = analytic_score_wb(W, b, *HYPER)
        h = 1e-6
        fw = (log_density_wb(W + h, b, *HYPER) - log_density_wb(W - h, b, *HYPER)) / (2 * h)
        fb = (log_density_wb(W, b + h, *HYPER) - log_density_wb(W, b - h, *HYPER)) / (2 * h)
        np.testing.assert_allclose(dw, fw, rtol=1e-6)
        np.testing.assert_allclose(db, fb, rtol=1e-6)

    def test_density_normalised(self):
        W = np.linspace(-12, -4, 401)
        b = np.linspace(2, 14, 601)
        dens = np.exp(log_density_wb(W[:, None], b[None, :], *HYPER))
        assert np.trapezoid(np.trapezoid(dens, b, axis=1), W) == pytest.approx(1.0, abs=1e-4)

    def test_zero_w_rejected(self):
        with pytest.raises(ValueError):
            analytic_score_wb(0.0, 1.0, *HYPER)
