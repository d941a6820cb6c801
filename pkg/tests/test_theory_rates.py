import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmilab.errors import UnsupportedBoundaryError, ValidationError
from hmilab.model import make_scale_free_target
from hmilab.theory.rates import (RICH_HEAVY, RICH_LIGHT, SCARCE_HEAVY, SCARCE_LIGHT, bayes_thresholds, k_alpha,
                           predict_mse_decomposition, predict_rates, regime_exponent)


def spec(m, g, d=None):
    return make_scale_free_target(m, g, "he2", 0.1, d or max(m, 10))


def test_scarce_heavy_example():
    p = predict_rates(spec(10, 1.3), 100.0)
    assert p.regime == SCARCE_HEAVY
    assert p.mse_scaling_exponent == pytest.approx(-1 + 1 / 2.6)
    assert abs(p.mse_scaling_exponent + 0.61538) < 1e-5
    assert p.constants_absorbed


def test_crossover_scale():
    assert predict_rates(spec(10, 1.3), 5.0).crossover_scale == pytest.approx(398.107, abs=1e-3)


def test_scarce_light_example():
    p = predict_rates(spec(50, 0.3), 10.0)
    assert p.regime == SCARCE_LIGHT and p.mse_scaling_exponent == 0.0


def test_all_four_branches():
    assert predict_rates(spec(10, 1.3), 1e4).regime == RICH_HEAVY
    assert predict_rates(spec(50, 0.3), 1e4).regime == RICH_LIGHT
    assert regime_exponent(RICH_HEAVY, 1.3) == -1.0
    assert regime_exponent(RICH_LIGHT, 0.3) == -1.0
    assert regime_exponent(SCARCE_LIGHT, 0.3) == 0.0
    with pytest.raises(ValidationError):
        regime_exponent("other", 1.0)


def test_gamma_half_boundary():
    with pytest.raises(UnsupportedBoundaryError):
        predict_rates(spec(10, 0.5), 10.0)
    with pytest.raises(ValidationError):
        predict_rates(spec(10, 1.3), 0.0)


def test_crossover_band_is_one_decade():
    s = spec(10, 1.3)
    assert predict_rates(s, 398.0 * 3.0).in_crossover
    assert not predict_rates(s, 398.0 * 3.3).in_crossover
    assert predict_rates(s, 398.0 / 3.0).in_crossover


@given(st.floats(0.55, 3.0), st.floats(0.01, 1e6), st.integers(1, 40))
@settings(max_examples=100, deadline=None)
def test_k_alpha_formula(gamma, alpha, m):
    assert k_alpha(spec(m, gamma), alpha) == min(round(alpha ** (1 / (2 * gamma))), m)


@given(st.floats(0.55, 3.0), st.integers(2, 30))
@settings(max_examples=50, deadline=None)
def test_exponent_constant_within_regime(gamma, m):
    s = spec(m, gamma)
    scale = s.crossover_scale
    lo = [predict_rates(s, scale * f).mse_scaling_exponent for f in (1e-3, 1e-2, 0.5)]
    hi = [predict_rates(s, scale * f).mse_scaling_exponent for f in (2, 10, 1e3)]
    assert len(set(lo)) == 1 and len(set(hi)) == 1
    assert lo[0] == pytest.approx(-1 + 1 / (2 * gamma)) and hi[0] == -1.0


def test_bayes_thresholds():
    th = bayes_thresholds(spec(5, 1.0))
    assert th == pytest.approx([1, 4, 9, 16, 25])
    light = bayes_thresholds(spec(16, 0.25))
    assert light[0] == pytest.approx(16**0.5)


def test_decomposition_rich():
    s = spec(10, 1.3)
    dec = predict_mse_decomposition(s, 1000.0)
    assert dec.underfit_part == 0.0 and dec.learned_part == pytest.approx(10 / 1000)
    assert dec.regime == RICH_HEAVY and dec.total == pytest.approx(0.01)


def test_decomposition_alpha_one():
    s = spec(10, 1.3)
    learned, underfit = predict_mse_decomposition(s, 1.0)
    assert learned == 1.0
    assert underfit == pytest.approx(1 - s.a_star[0] ** 2, abs=1e-12)


def test_as_dict_keys():
    d = predict_rates(spec(10, 1.3), 50.0).as_dict()
    assert {"regime", "exponent", "k_alpha", "thresholds", "in_crossover"} <= set(d)
    assert math.isclose(d["crossover_scale"], 10**2.6)
