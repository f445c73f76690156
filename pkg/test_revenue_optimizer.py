"""Expected revenue and the certainty-equivalent price."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from errors import ConfigurationError, DimensionError
from glm_core import LinkFunction
from revenue_optimizer import (
    PriceBox,
    RevenueModel,
    certainty_equivalent_price,
    expected_revenue,
    golden_section_max,
    oracle_optimal_price,
)

BOX = PriceBox(0.5, 5.0)
LINEAR = RevenueModel(LinkFunction.IDENTITY)
LOGISTIC = RevenueModel(LinkFunction.LOGISTIC)
NO_CONTEXT = np.zeros(0)


def grid_max(model, c, beta, box, points):
    grid = np.linspace(box.lower, box.upper, points)
    values = model.curve(beta, c)(grid)
    return grid[int(np.argmax(values))], float(np.max(values))


class TestExpectedRevenue:
    def test_zero_price_zero_revenue(self):
        assert expected_revenue(LINEAR, 0.0, NO_CONTEXT, np.array([1.0, -0.5])) == 0.0

    def test_linear_closed_form(self):
        assert expected_revenue(LINEAR, 1.0, NO_CONTEXT, np.array([1.0, -0.5])) == pytest.approx(0.5)

    def test_logistic_at_zero_predictor(self):
        assert expected_revenue(LOGISTIC, 2.0, NO_CONTEXT, np.array([1.0, -0.5])) == pytest.approx(1.0)

    def test_context_enters_linear_predictor(self):
        beta = np.array([1.0, -0.5, 2.0])
        assert expected_revenue(LINEAR, 2.0, np.array([0.25]), beta) == pytest.approx(2.0 * (1.0 - 1.0 + 0.5))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            expected_revenue(LINEAR, 1.0, np.ones(2), np.array([1.0, -0.5]))


class TestPriceBox:
    def test_requires_ordered_bounds(self):
        with pytest.raises(ConfigurationError):
            PriceBox(2.0, 2.0)

    def test_clamp(self):
        assert BOX.clamp(7.0) == 5.0
        assert BOX.clamp(0.1) == 0.5
        assert BOX.clamp(1.3) == 1.3


class TestCertaintyEquivalentPrice:
    def test_linear_interior_optimum(self):
        q = certainty_equivalent_price(LINEAR, NO_CONTEXT, np.array([1.0, -0.5]), BOX)
        assert q == pytest.approx(1.0, abs=1e-6)

    def test_linear_optimum_clamped_to_upper_bound(self):
        q = certainty_equivalent_price(LINEAR, NO_CONTEXT, np.array([1.0, -0.05]), BOX)
        assert q == 5.0

    def test_logistic_matches_fine_grid(self):
        beta = np.array([1.0, -0.5])
        q = certainty_equivalent_price(LOGISTIC, NO_CONTEXT, beta, BOX)
        q_grid, _ = grid_max(LOGISTIC, NO_CONTEXT, beta, BOX, 1_000_001)
        assert q == pytest.approx(q_grid, abs=1e-4)

    def test_flat_revenue_breaks_tie_at_lower_bound(self):
        assert certainty_equivalent_price(LINEAR, NO_CONTEXT, np.zeros(2), BOX) == 0.5

    @settings(max_examples=300, deadline=None)
    @given(
        model=st.sampled_from([LINEAR, LOGISTIC]),
        intercept=st.floats(-1.0, 3.0),
        slope=st.floats(-2.0, 0.5),
        context_beta=arrays(np.float64, 3, elements=st.floats(-3.0, 3.0)),
        c=arrays(np.float64, 3, elements=st.floats(-3.0, 3.0)),
    )
    def test_argmax_quality_and_containment(self, model, intercept, slope, context_beta, c):
        beta = np.concatenate([[intercept, slope], context_beta])
        q = certainty_equivalent_price(model, c, beta, BOX, opt_tol=1e-8)
        assert BOX.contains(q)
        _, best = grid_max(model, c, beta, BOX, 10_000)
        assert expected_revenue(model, q, c, beta) >= best - 1e-8

    def test_deterministic(self, rng):
        beta = np.array([2.0, -0.7, 0.4])
        c = np.array([0.3])
        assert certainty_equivalent_price(LOGISTIC, c, beta, BOX) == certainty_equivalent_price(LOGISTIC, c, beta, BOX)


class TestOraclePrice:
    def test_definitional_identity(self, rng):
        for _ in range(100):
            beta0 = np.concatenate([[1.0, -0.5], rng.standard_normal(4)])
            c = rng.standard_normal(4)
            for model in (LINEAR, LOGISTIC):
                assert oracle_optimal_price(model, c, beta0, BOX) == certainty_equivalent_price(model, c, beta0, BOX)

    def test_linear_closed_form(self):
        assert oracle_optimal_price(LINEAR, NO_CONTEXT, np.array([1.0, -0.5]), BOX) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("slope", [0.0, 0.3, 2.0])
    def test_non_negative_slope_goes_to_upper_bound(self, slope):
        assert oracle_optimal_price(LINEAR, NO_CONTEXT, np.array([1.0, slope]), BOX) == 5.0


class TestArgmaxRegularity:
    """Local Lipschitzness of the CE price and the quadratic revenue gap, linear demand."""

    def draws(self, rng, n, beta0):
        for _ in range(n):
            c = np.clip(rng.standard_normal(15), -6, 6)
            delta = rng.standard_normal(17)
            delta *= rng.uniform(1e-3, 0.1) / np.linalg.norm(delta)
            yield beta0, beta0 + delta, c

    def ratios(self, rng, n, beta0):
        lipschitz, gap = [], []
        for beta0, beta, c in self.draws(rng, n, beta0):
            p_star = oracle_optimal_price(LINEAR, c, beta0, BOX)
            p = certainty_equivalent_price(LINEAR, c, beta, BOX)
            lipschitz.append(abs(p - p_star) / np.linalg.norm(beta - beta0))
            if BOX.lower + 1e-6 < p_star < BOX.upper - 1e-6 and abs(p - p_star) > 1e-4:
                r_gap = expected_revenue(LINEAR, p_star, c, beta0) - expected_revenue(LINEAR, p, c, beta0)
                gap.append(r_gap / (p - p_star) ** 2)
        return np.array(lipschitz), np.array(gap)

    def test_price_is_locally_lipschitz_in_beta(self, rng):
        beta0 = np.concatenate([[1.0, -0.5], rng.standard_normal(15)])
        fitted, _ = self.ratios(rng, 1000, beta0)
        K = 2.0 * float(np.max(fitted))
        fresh, _ = self.ratios(rng, 1000, beta0)
        assert np.all(fresh <= K)

    def test_revenue_gap_is_quadratic_in_price(self, rng):
        beta0 = np.concatenate([[1.0, -0.5], rng.standard_normal(15)])
        _, fitted = self.ratios(rng, 1000, beta0)
        K0 = 1.01 * float(np.max(fitted))
        _, fresh = self.ratios(rng, 1000, beta0)
        assert np.all(fresh >= -1e-9)
        assert np.all(fresh <= K0)


class TestGoldenSection:
    def test_finds_quadratic_peak(self):
        q = golden_section_max(lambda x: -(x - 1.234) ** 2, 0.0, 3.0, tol=1e-9)
        assert q == pytest.approx(1.234, abs=1e-8)
