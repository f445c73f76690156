"""Link functions, response model and feature assembly."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import ConfigurationError, DimensionError, DomainError
from glm_core import (
    FeatureVector,
    LinkFunction,
    NoiseKind,
    NoiseModel,
    link_derivative,
    link_eval,
    min_link_slope,
    sample_response,
    sample_responses,
)

GRID = np.linspace(-10.0, 10.0, 1000)


class TestLinkEval:
    def test_identity_is_identity_map(self):
        assert link_eval(LinkFunction.IDENTITY, 0.7) == 0.7

    def test_logistic_at_zero(self):
        assert link_eval(LinkFunction.LOGISTIC, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_logistic_at_log_three(self):
        assert link_eval(LinkFunction.LOGISTIC, math.log(3.0)) == pytest.approx(0.75, abs=1e-14)

    def test_logistic_output_in_open_unit_interval(self):
        values = link_eval(LinkFunction.LOGISTIC, GRID)
        assert np.all(values > 0) and np.all(values < 1)

    @pytest.mark.parametrize("link", list(LinkFunction))
    def test_non_finite_rejected(self, link):
        with pytest.raises(DomainError):
            link_eval(link, float("nan"))
        with pytest.raises(DomainError):
            link_derivative(link, float("inf"))

    @given(
        link=st.sampled_from(list(LinkFunction)),
        z=st.floats(-10.0, 10.0),
        gap=st.floats(1e-3, 10.0),
    )
    def test_strictly_increasing(self, link, z, gap):
        assert link_eval(link, z + gap) > link_eval(link, z)

    @given(
        link=st.sampled_from(list(LinkFunction)),
        z1=st.floats(-20.0, 20.0),
        z2=st.floats(-20.0, 20.0),
    )
    def test_lipschitz_constant(self, link, z1, z2):
        change = abs(link_eval(link, z2) - link_eval(link, z1))
        assert change <= link.lipschitz * abs(z2 - z1) + 1e-15


class TestLinkDerivative:
    def test_identity_derivative_is_one(self):
        assert link_derivative(LinkFunction.IDENTITY, -3.2) == 1.0

    def test_logistic_derivative_at_zero(self):
        assert link_derivative(LinkFunction.LOGISTIC, 0.0) == pytest.approx(0.25, abs=1e-15)

    @pytest.mark.parametrize("z", range(-4, 5))
    def test_logistic_matches_finite_difference(self, z):
        h = 1e-6
        link = LinkFunction.LOGISTIC
        numerical = (link_eval(link, z + h) - link_eval(link, z - h)) / (2 * h)
        assert link_derivative(link, float(z)) == pytest.approx(numerical, abs=1e-6)

    @pytest.mark.parametrize("link", list(LinkFunction))
    def test_positive_and_consistent_on_grid(self, link):
        h = 1e-6
        analytical = link_derivative(link, GRID)
        numerical = (link_eval(link, GRID + h) - link_eval(link, GRID - h)) / (2 * h)
        assert np.all(analytical > 0)
        np.testing.assert_allclose(analytical, numerical, atol=1e-6)

    def test_logistic_equals_mu_times_one_minus_mu(self):
        mu = link_eval(LinkFunction.LOGISTIC, GRID)
        np.testing.assert_allclose(link_derivative(LinkFunction.LOGISTIC, GRID), mu * (1 - mu), atol=1e-15)


class TestSampleResponse:
    def test_zero_noise_returns_mean(self, rng):
        x = FeatureVector.build([1.0], [])
        y = sample_response(LinkFunction.IDENTITY, NoiseModel(NoiseKind.UNIFORM, 0.0), np.array([1.3]), x, rng)
        assert y == 1.3

    def test_bernoulli_requires_logistic(self, rng):
        with pytest.raises(ConfigurationError):
            sample_response(LinkFunction.IDENTITY, NoiseModel(NoiseKind.BERNOULLI), np.ones(2), np.ones(2), rng)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            sample_response(LinkFunction.IDENTITY, NoiseModel(), np.ones(3), np.ones(2), rng)

    def test_bernoulli_mean_at_zero_predictor(self, rng):
        y = sample_responses(LinkFunction.LOGISTIC, NoiseModel(NoiseKind.BERNOULLI), 0.5, rng, size=100_000)
        assert set(np.unique(y)) <= {0.0, 1.0}
        assert abs(y.mean() - 0.5) <= 0.01

    def test_uniform_noise_is_centered_and_bounded(self, rng):
        noise = NoiseModel(NoiseKind.UNIFORM, 0.5)
        y = sample_responses(LinkFunction.IDENTITY, noise, 0.8, rng, size=100_000)
        eps = y - 0.8
        assert np.all(np.abs(eps) <= noise.bound + 1e-12)
        assert abs(eps.mean()) <= 0.005

    def test_single_draws_respect_bound(self, rng):
        noise = NoiseModel(NoiseKind.UNIFORM, 0.25)
        beta0 = np.array([1.0, -0.5, 0.3])
        x = FeatureVector.build([1.0, 2.0], [0.5])
        mean = float(beta0 @ x.x)
        for _ in range(2000):
            assert abs(sample_response(LinkFunction.IDENTITY, noise, beta0, x, rng) - mean) <= 0.25 + 1e-12

    def test_bernoulli_residual_in_unit_band(self, rng):
        beta0 = np.array([0.2, -0.4])
        x = np.array([1.0, 1.5])
        mu = link_eval(LinkFunction.LOGISTIC, float(beta0 @ x))
        for _ in range(500):
            y = sample_response(LinkFunction.LOGISTIC, NoiseModel(NoiseKind.BERNOULLI), beta0, x, rng)
            assert -1.0 <= y - mu <= 1.0

    def test_negative_half_width_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseModel(NoiseKind.UNIFORM, -0.1)


class TestFeatures:
    def test_concatenation(self):
        x = FeatureVector.build([1.0, 2.5], [0.1, -0.2])
        np.testing.assert_array_equal(x.x, [1.0, 2.5, 0.1, -0.2])
        assert x.dim == 4

    def test_box_membership(self):
        x = FeatureVector.build([1.0, 2.5], [0.1, -3.0])
        assert x.within(p_max=5.0, c_max=3.0)
        assert not x.within(p_max=2.0, c_max=3.0)
        assert not x.within(p_max=5.0, c_max=1.0)


class TestLinkSlopeDiagnostic:
    def test_identity_slope_is_one(self):
        assert min_link_slope(LinkFunction.IDENTITY, np.array([1.0, -0.5, 2.0]), (0.5, 5.0), 6.0) == 1.0

    def test_logistic_slope_matches_brute_force(self, rng):
        beta = np.array([1.0, -0.5, 0.3, -0.2])
        kappa = min_link_slope(LinkFunction.LOGISTIC, beta, (0.5, 5.0), 1.0, grid_points=201)
        q = np.linspace(0.5, 5.0, 201)
        corners = np.array([[a, b] for a in (-1.0, 1.0) for b in (-1.0, 1.0)])
        z = beta[0] + beta[1] * q[:, None] + corners @ beta[2:]
        brute = float(np.min(link_derivative(LinkFunction.LOGISTIC, z.ravel())))
        assert kappa == pytest.approx(brute, rel=1e-12)
        assert kappa > 0


class TestNoiseSeed:
    def test_seeded_noise_is_reproducible(self):
        noise = NoiseModel(NoiseKind.UNIFORM, 0.5, seed=3)
        first = sample_responses(LinkFunction.IDENTITY, noise, np.zeros(5), noise.rng())
        second = sample_responses(LinkFunction.IDENTITY, noise, np.zeros(5), noise.rng())
        np.testing.assert_array_equal(first, second)
