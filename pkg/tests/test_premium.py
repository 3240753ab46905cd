import math

import numpy as np
import pytest
from scipy.integrate import quad

from pricing.analytic import discounted_band_moments, expected_local_time_weight
from pricing.model import MarketParams
from pricing.numerics import (
    BracketError,
    first_panel_local_time,
    first_panel_occupancy,
    largest_root,
    singular_trapezoid_weights,
    trapezoid_weights,
)
from pricing.premium import DividendBand, LocalTimeTerm, OccupancyBand, PremiumTerms, discounted_premium

PARAMS = MarketParams(r=0.1, delta=0.1, sigma=0.3, K=1.0)
NODES = np.linspace(0.0, 1.0, 401)


def _flat(value):
    return np.full(NODES.size, value)


def test_dividend_band_matches_direct_quadrature():
    terms = PremiumTerms(dividend=(DividendBand(_flat(1.3), _flat(np.inf)),))
    numeric = discounted_premium(1.2, 0.0, NODES, PARAMS, terms)[0]
    exact, _ = quad(lambda tau: float(discounted_band_moments(1.2, 1.3, np.inf, tau, PARAMS)[1]), 0.0, 1.0)
    assert numeric == pytest.approx(exact, abs=1e-5)


def test_occupancy_band_matches_direct_quadrature():
    terms = PremiumTerms(occupancy=(OccupancyBand(_flat(1.3), _flat(1.6), 0.03),))
    numeric = discounted_premium(1.2, 0.0, NODES, PARAMS, terms)[0]
    exact, _ = quad(lambda tau: 0.03 * float(discounted_band_moments(1.2, 1.3, 1.6, tau, PARAMS)[0]), 0.0, 1.0)
    assert numeric == pytest.approx(exact, abs=1e-6)


def test_local_time_term_matches_direct_quadrature():
    terms = PremiumTerms(local_time=(LocalTimeTerm(_flat(1.3), _flat(0.8), 0.5),))
    numeric = discounted_premium(1.2, 0.0, NODES, PARAMS, terms)[0]

    def integrand(tau):
        return 0.5 * 0.8 * math.exp(-0.1 * tau) * float(expected_local_time_weight(1.2, 1.3, 0.0, tau, PARAMS))

    exact, _ = quad(integrand, 1e-12, 1.0, limit=200)
    assert numeric == pytest.approx(exact, abs=5e-5)


def test_first_panel_only_gives_frozen_band_rate():
    # deep inside the band over a short panel the premium is (delta S - rK) h
    nodes = np.array([0.0, 1e-4])
    terms = PremiumTerms(dividend=(DividendBand(np.array([1.0, 1.0]), np.array([np.inf, np.inf])),))
    value = discounted_premium(2.0, 0.0, nodes, PARAMS, terms)[0]
    assert value == pytest.approx((0.1 * 2.0 - 0.1) * 1e-4, rel=1e-3)


def test_empty_band_contributes_nothing():
    terms = PremiumTerms(dividend=(DividendBand(_flat(1.5), _flat(1.4)),))
    assert discounted_premium(1.45, 0.0, NODES, PARAMS, terms)[0] == pytest.approx(0.0, abs=1e-15)


def test_with_first_fills_only_missing_edges():
    terms = PremiumTerms(dividend=(DividendBand(np.array([np.nan, 1.2]), np.array([2.0, 2.0])),))
    filled = terms.with_first(1.7)
    assert list(filled.dividend[0].lower) == [1.7, 1.2]
    assert list(filled.dividend[0].upper) == [2.0, 2.0]


def test_first_panel_closed_forms_limits():
    h = 0.01
    assert first_panel_occupancy(np.array([np.inf]), h)[0] == h
    assert first_panel_occupancy(np.array([-np.inf]), h)[0] == 0.0
    # at c = 0 half the panel is spent above the level
    assert first_panel_occupancy(np.array([0.0]), h)[0] == pytest.approx(0.5 * h)
    assert first_panel_local_time(np.array([0.0]), h)[0] == pytest.approx(2.0 * math.sqrt(h) / math.sqrt(2 * math.pi))
    assert first_panel_local_time(np.array([np.inf]), h)[0] == 0.0


def test_quadrature_weights_integrate_exactly():
    tau = np.linspace(0.1, 2.0, 21)
    assert trapezoid_weights(tau) @ (3.0 * tau + 1.0) == pytest.approx(1.5 * (4.0 - 0.01) + 1.9)
    exact = 2.0 * (math.sqrt(2.0) - math.sqrt(0.1))
    assert singular_trapezoid_weights(tau) @ np.ones_like(tau) == pytest.approx(exact)


def test_largest_root_takes_the_top_crossing():
    # roots at 1.1, 1.2 and 1.5; a plain bracket on [1, 2] could return any of them
    def fn(x):
        return (x - 1.1) * (x - 1.2) * (x - 1.5)

    assert largest_root(fn, 1.0, 2.0, 1e-12) == pytest.approx(1.5, abs=1e-10)


def test_largest_root_without_a_non_positive_sample():
    assert largest_root(lambda x: x - 0.5, 1.0, 2.0, 1e-12) is None
    with pytest.raises(BracketError) as info:
        largest_root(lambda x: -1.0, 1.0, 2.0, 1e-12, node=7)
    assert info.value.node == 7
