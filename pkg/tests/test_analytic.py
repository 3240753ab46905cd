import math

import numpy as np
import pytest

from pricing.analytic import (
    auto_exercise_price,
    discounted_band_moments,
    discounted_expectation,
    discounted_hit_before,
    european_call,
    european_capped_call,
    expected_local_time_weight,
    instantaneous_waiting_benefit,
    killed_density,
    killed_expectation,
    norm_cdf,
    norm_pdf,
    perpetual_hit_value,
    tail_probability,
)
from pricing.model import MarketParams

PARAMS = MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0)


def _call_payoff(K):
    def payoff(x):
        return np.maximum(np.asarray(x, dtype=float) - K, 0.0)

    payoff.kinks = (K,)
    return payoff


def test_normal_law():
    assert float(norm_cdf(0.0)) == 0.5
    assert float(norm_pdf(0.0)) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    x = np.linspace(-3.0, 3.0, 7)
    np.testing.assert_allclose(norm_cdf(x) + norm_cdf(-x), 1.0)
    assert float(norm_cdf(-40.0)) >= 0.0


def test_capped_call_is_a_call_spread():
    S = np.array([0.8, 1.0, 1.2, 1.5, 2.0])
    capped = european_capped_call(S, 0.5, 1.39, 4.0, PARAMS)
    spread = european_call(S, 0.5, 1.0, 4.0, PARAMS) - european_call(S, 0.5, 1.39, 4.0, PARAMS)
    assert capped == pytest.approx(spread, abs=1e-12)
    assert np.all(capped <= math.exp(-0.1 * 3.5) * 0.39 + 1e-12)


def test_european_call_expired_is_payoff():
    assert european_call(1.3, 2.0, 1.0, 2.0, PARAMS) == pytest.approx(0.3)
    assert european_capped_call(1.5, 2.0, 1.39, 2.0, PARAMS) == pytest.approx(0.39)


def test_discounted_expectation_reproduces_black_scholes():
    for S in (0.7, 1.0, 1.4):
        numeric = discounted_expectation(S, 0.0, 2.0, _call_payoff(1.0), PARAMS)
        assert numeric == pytest.approx(european_call(S, 0.0, 1.0, 2.0, PARAMS), abs=1e-7)


def test_band_probability_over_whole_line_is_the_discount():
    prob, _ = discounted_band_moments(1.2, 1e-12, 1e12, 1.5, PARAMS)
    assert float(prob) == pytest.approx(math.exp(-0.15), rel=1e-9)


def test_tail_probability_ties_at_expiry():
    out = tail_probability(np.array([0.9, 1.0, 1.1]), 1.0, 0.0, PARAMS)
    assert list(out) == [0.0, 0.5, 1.0]


def test_hit_is_one_at_the_barrier_and_zero_after_expiry():
    assert discounted_hit_before(1.39, 1.39, 1.0, 4.0, PARAMS) == 1.0
    assert discounted_hit_before(1.2, 1.39, 4.0, 4.0, PARAMS) == 0.0
    assert discounted_hit_before(1.39, 1.39, 4.0, 4.0, PARAMS) == 1.0


@pytest.mark.parametrize("S", [0.8, 1.2, 1.6, 2.5])
def test_hit_tends_to_perpetual_value(S):
    finite = discounted_hit_before(S, 1.39, 0.0, 400.0, PARAMS)
    assert finite == pytest.approx(perpetual_hit_value(S, 1.39, PARAMS), rel=1e-6)


@pytest.mark.parametrize("S", [1.0, 1.6])
def test_hit_and_survival_add_to_one_without_discounting(S):
    params = MarketParams(r=1e-9, delta=0.02, sigma=0.3, K=1.0)
    hit = discounted_hit_before(S, 1.3, 0.0, 2.0, params)
    killed = killed_expectation(S, 1.3, 0.0, 2.0, params, np.ones_like)
    assert hit + killed == pytest.approx(1.0, abs=1e-6)


def test_hit_probability_is_monotone_in_distance():
    values = discounted_hit_before(np.array([0.9, 1.0, 1.1, 1.2, 1.3]), 1.39, 0.0, 1.0, PARAMS)
    assert np.all(np.diff(values) > 0)


def test_killed_density_vanishes_at_the_barrier():
    below = killed_density(np.array([1.3 * (1 - 1e-9)]), 1.0, 1.3, 0.0, 1.0, PARAMS)
    far = killed_density(np.array([0.9]), 1.0, 1.3, 0.0, 1.0, PARAMS)
    other_side = killed_density(np.array([1.5]), 1.0, 1.3, 0.0, 1.0, PARAMS)
    assert below[0] == pytest.approx(0.0, abs=1e-6)
    assert far[0] > 0.1
    assert other_side[0] == 0.0


def test_killed_expectation_at_barrier_and_expiry():
    assert killed_expectation(1.3, 1.3, 0.0, 1.0, PARAMS, np.ones_like) == 0.0
    assert killed_expectation(1.2, 1.3, 1.0, 1.0, PARAMS, _call_payoff(1.0)) == pytest.approx(0.2)


def test_instantaneous_waiting_benefit_regions():
    params = MarketParams(r=0.03, delta=0.05, sigma=0.25, K=1.0)
    out = instantaneous_waiting_benefit(np.array([0.9, 1.2, 1.5]), 1.45, params)
    assert out[0] == 0.0
    assert out[1] == pytest.approx(0.03 - 0.05 * 1.2)
    assert out[2] == pytest.approx(-0.03 * 0.45)


def test_local_time_weight_requires_later_time():
    with pytest.raises(ValueError):
        expected_local_time_weight(1.0, 1.3, 1.0, 1.0, PARAMS)
    assert expected_local_time_weight(1.0, math.inf, 0.0, 1.0, PARAMS) == 0.0
    assert expected_local_time_weight(1.0, 1.3, 0.0, 1.0, PARAMS) > 0.0


@pytest.mark.parametrize("S", [0.9, 1.2, 1.35])
def test_auto_exercise_dominates_the_capped_european(S):
    auto = auto_exercise_price(S, 0.0, 1.39, 4.0, PARAMS)
    assert auto >= european_capped_call(S, 0.0, 1.39, 4.0, PARAMS) - 1e-9
    assert auto <= 0.39 + 1e-12


def test_auto_exercise_above_the_cap_is_immediate():
    assert auto_exercise_price(1.5, 1.0, 1.39, 4.0, PARAMS) == pytest.approx(0.39)
