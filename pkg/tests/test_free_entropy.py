import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmilab.errors import GenerativeExponentError, ValidationError
from hmilab.model import hermite_series_link, link_preset, polynomial_link
from hmilab.theory import (FreeEntropyProblem, f_rs, free_entropy_threshold, it_transition, lower_constant,
                           upper_constant)
from hmilab.theory.free_entropy import f_rs_prime, maximize_free_entropy, transition_scan
from oracles import grid_argmax

HE2_HALF = link_preset("he2")


def test_problem_validation():
    with pytest.raises(ValidationError):
        FreeEntropyProblem((0.0, 1.0, 1.0), 1.0, 1.0)
    with pytest.raises(GenerativeExponentError):
        FreeEntropyProblem((0.0, 0.0, 0.0, 0.0, 1.0), 1.0, 1.0)
    with pytest.raises(ValidationError):
        FreeEntropyProblem((0.0, 0.0, 1.0), 0.0, 1.0)


def test_below_bracket_maximizer_zero():
    prob = FreeEntropyProblem.from_link(HE2_HALF, 0.1, 0.0)
    D = lower_constant(prob)
    m, _ = maximize_free_entropy(prob.with_alpha(0.9 * D / 0.1))
    assert m == 0.0


def test_pure_he2_upper_edge():
    link = polynomial_link([-1.0, 0.0, 1.0])  # He_2
    prob = FreeEntropyProblem.from_link(link, 1.0, 0.0)
    assert upper_constant(prob) <= 1.0
    assert it_transition(prob) <= 1.0 * (1 + 1e-6)


def test_stationarity_residual_alpha_lambda_10():
    prob = FreeEntropyProblem.from_link(HE2_HALF, 1.0, 10.0)
    m, _ = maximize_free_entropy(prob)
    assert m > 0.5
    # 1/(1-m) = 1 + alpha lambda S'(m)
    w = prob.weights
    s_prime = sum(k * w[k] * m ** (k - 1) for k in range(2, len(w)))
    assert abs(1.0 / (1.0 - m) - (1.0 + 10.0 * s_prime)) <= 1e-6 * (1.0 / (1.0 - m))
    assert abs(f_rs_prime(prob, m)) <= 1e-5


def test_maximizer_vs_dense_grid():
    prob = FreeEntropyProblem.from_link(link_preset("he2_he4"), 0.5, 7.0)
    m, _ = maximize_free_entropy(prob)
    assert abs(m - grid_argmax(lambda x: f_rs(prob, x), 0, 1 - 1e-9, 1_000_001)) <= 1e-5


def test_entropy_series_branch_continuous():
    prob = FreeEntropyProblem.from_link(HE2_HALF, 1.0, 0.0)
    a, b = f_rs(prob, 1e-3 * (1 - 1e-12)), f_rs(prob, 1e-3)
    assert abs(a - b) <= 1e-15
    with pytest.raises(ValidationError):
        f_rs(prob, 1.0)


@pytest.mark.parametrize("lam", [0.05, 0.1, 0.2, 0.4])
def test_bracket_contains_transition(lam):
    prob = FreeEntropyProblem.from_link(HE2_HALF, lam, 0.0)
    a_it = it_transition(prob)
    D, U = lower_constant(prob), upper_constant(prob)
    assert D * (1 - 1e-6) <= a_it * lam <= U * (1 + 1e-6)


def test_transition_collapse():
    rows = transition_scan(HE2_HALF, [0.05, 0.1, 0.2, 0.4])
    prods = [r["alpha_lambda"] for r in rows]
    assert max(prods) / min(prods) - 1 <= 0.05


def test_he2_he4_first_order_free():
    # c_3 = 0 so the transition stays continuous at alpha lambda = c_2^-2
    prob = FreeEntropyProblem.from_link(link_preset("he2_he4"), 1.0, 0.0)
    assert it_transition(prob) == pytest.approx(1.0, rel=1e-6)


def test_discontinuous_transition_below_upper():
    # a large He_4 component lowers the transition strictly below c_2^-2
    link = hermite_series_link((0.0, 0.0, 0.3, 0.0, 6.0))
    prob = FreeEntropyProblem.from_link(link, 1.0, 0.0)
    a_it = it_transition(prob)
    D, U = lower_constant(prob), upper_constant(prob)
    assert D * (1 - 1e-6) <= a_it <= U
    assert a_it < 0.9 * U
    res = free_entropy_threshold(prob.with_alpha(1.01 * a_it))
    assert res.m_star_overlap > 0


def test_result_unpacking_and_tail_bound():
    prob = FreeEntropyProblem.from_link(link_preset("tanh_sq"), 0.3, 20.0)
    m, (lo, hi) = free_entropy_threshold(prob)
    assert 0 <= m < 1 and lo <= hi
    assert 0.0 <= prob.tail_bound < 1e-2


@given(st.floats(0.01, 50.0), st.floats(0.01, 5.0))
@settings(max_examples=30, deadline=None)
def test_only_alpha_lambda_matters(alpha, lam):
    p1 = FreeEntropyProblem.from_link(HE2_HALF, lam, alpha)
    p2 = FreeEntropyProblem.from_link(HE2_HALF, 1.0, alpha * lam)
    for m in (0.0, 0.3, 0.9):
        assert f_rs(p1, m) == pytest.approx(f_rs(p2, m), rel=1e-12, abs=1e-14)
