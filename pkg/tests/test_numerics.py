"""Low-level numerics: Sobol' streams, Box-Muller, special functions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf
from scipy.stats import kstest

from relbo.numerics import (
    MAX_SOBOL_DIM,
    SobolStream,
    box_muller,
    gaussian_qmc,
    regularized_lower_gamma,
    sobol_points,
    std_normal_cdf,
    std_normal_log_cdf,
    std_normal_log_pdf,
    std_normal_pdf,
)


def log_phi_asymptotic(x):
    """Independent oracle for log Phi(-|x|) deep in the tail: the Mills-ratio
    asymptotic series Phi(-x) = phi(x)/x * (1 - 1/x^2 + 3/x^4 - 15/x^6 + ...).
    """
    assert x >= 10
    series = 1.0 - 1.0 / x**2 + 3.0 / x**4 - 15.0 / x**6 + 105.0 / x**8
    return -0.5 * x**2 - 0.5 * np.log(2 * np.pi) - np.log(x) + np.log(series)


class TestSobolStream:
    def test_first_point_is_origin(self):
        assert np.array_equal(SobolStream(2).take(1), np.zeros((1, 2)))

    def test_second_point_is_midpoint(self):
        pts = SobolStream(2).take(2)
        assert np.array_equal(pts[1], [0.5, 0.5])

    def test_scrambled_mean_near_half(self):
        pts = SobolStream(8, scramble_seed=0).take(4096)
        assert np.all(np.abs(pts.mean(axis=0) - 0.5) < 0.01)

    def test_batching_invariance(self):
        a = SobolStream(3, scramble_seed=7)
        b = SobolStream(3, scramble_seed=7)
        got_a = np.vstack([a.take(1), a.take(4), a.take(11)])
        got_b = b.take(16)
        np.testing.assert_array_equal(got_a, got_b)

    def test_clone_continues_in_lockstep(self):
        a = SobolStream(2, scramble_seed=5)
        a.take(9)
        b = a.clone()
        np.testing.assert_array_equal(a.take(8), b.take(8))

    @pytest.mark.parametrize("dim", [0, MAX_SOBOL_DIM + 1])
    def test_dimension_validation(self, dim):
        with pytest.raises(ValueError):
            SobolStream(dim)

    def test_count_validation(self):
        with pytest.raises(ValueError):
            SobolStream(2).take(0)

    def test_sobol_points_advances_cursor(self):
        s = SobolStream(2)
        sobol_points(s, 4)
        assert s.cursor == 4


class TestBoxMuller:
    def test_exact_pair(self):
        # (e^{-1/2}, 0): r = sqrt(-2 ln e^{-1/2}) = 1, theta = 0 -> (1, 0).
        z = box_muller(np.array([[np.exp(-0.5), 0.0]]))
        np.testing.assert_allclose(z, [[1.0, 0.0]], atol=1e-14)

    def test_quarter_turn_zeroes_cosine(self):
        # theta = pi/2 makes the cosine output zero regardless of u1.
        for u1 in (0.1, 0.5, 0.9):
            z = box_muller(np.array([[u1, 0.25]]))
            assert abs(z[0, 0]) < 1e-14

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            box_muller(np.zeros((3, 3)))

    def test_zero_uniform_stays_finite(self):
        assert np.all(np.isfinite(box_muller(np.zeros((1, 2)))))

    def test_ks_against_standard_normal(self):
        u = SobolStream(2, scramble_seed=11).take(2**16)
        z = box_muller(u).ravel()
        assert kstest(z, "norm").pvalue > 0.001

    @given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=99))
    @settings(max_examples=20, deadline=None)
    def test_output_finite_and_shaped(self, n, seed):
        u = np.random.default_rng(seed).uniform(1e-6, 1 - 1e-6, size=(n, 4))
        z = box_muller(u)
        assert z.shape == (n, 4) and np.all(np.isfinite(z))


class TestGaussianQmc:
    def test_tail_probability(self):
        z = gaussian_qmc(SobolStream(2, scramble_seed=1), 2**16, [0.0], [1.0])
        p = np.mean(z[:, 0] >= 3.0)
        assert abs(p - 1.349898e-3) / 1.349898e-3 < 0.10

    def test_mean_and_scale_applied(self):
        z = gaussian_qmc(SobolStream(4, scramble_seed=2), 2**12, [5.0, -1.0], [2.0, 0.5])
        np.testing.assert_allclose(z.mean(axis=0), [5.0, -1.0], atol=0.1)
        np.testing.assert_allclose(z.std(axis=0), [2.0, 0.5], rtol=0.05)

    def test_scale_validation(self):
        with pytest.raises(ValueError):
            gaussian_qmc(SobolStream(2), 4, [0.0], [0.0])

    def test_stream_dimension_check(self):
        with pytest.raises(ValueError):
            gaussian_qmc(SobolStream(2), 4, np.zeros(3), np.ones(3))


class TestNormalFunctions:
    def test_cdf_symmetry_point(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_cdf_at_one(self):
        oracle = 0.5 * (1 + erf(1 / np.sqrt(2)))
        assert abs(std_normal_cdf(1.0) - 0.8413447461) < 1e-9
        assert abs(std_normal_cdf(1.0) - oracle) < 1e-12

    def test_log_cdf_deep_tail(self):
        got = std_normal_log_cdf(-20.0)
        want = log_phi_asymptotic(20.0)
        assert np.isfinite(got)
        assert abs(got - want) / abs(want) < 1e-6

    def test_log_cdf_consistent_with_cdf(self):
        x = np.linspace(-8, 8, 200)
        np.testing.assert_allclose(
            np.exp(std_normal_log_cdf(x)), std_normal_cdf(x), rtol=1e-10
        )

    def test_pdf_matches_log_pdf(self):
        x = np.linspace(-10, 10, 101)
        np.testing.assert_allclose(std_normal_pdf(x), np.exp(std_normal_log_pdf(x)), rtol=1e-12)
        assert np.all(std_normal_pdf(x) >= 0)

    def test_nan_rejected(self):
        for fn in (std_normal_cdf, std_normal_log_cdf, std_normal_pdf, std_normal_log_pdf):
            with pytest.raises(ValueError):
                fn(np.nan)


class TestRegularizedLowerGamma:
    def test_zero(self):
        assert regularized_lower_gamma(0.5, 0.0) == 0.0

    def test_half_shape_at_one(self):
        assert abs(regularized_lower_gamma(0.5, 1.0) - 0.8427007929) < 1e-9

    def test_exponential_median(self):
        assert abs(regularized_lower_gamma(1.0, np.log(2.0)) - 0.5) < 1e-12

    def test_erf_identity(self):
        x = np.linspace(0.0, 30.0, 301)
        np.testing.assert_allclose(
            regularized_lower_gamma(0.5, x), erf(np.sqrt(x)), atol=1e-10
        )

    def test_monotone(self):
        x = np.linspace(0, 10, 500)
        assert np.all(np.diff(regularized_lower_gamma(1.7, x)) >= 0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            regularized_lower_gamma(0.0, 1.0)
        with pytest.raises(ValueError):
            regularized_lower_gamma(0.5, -1.0)
