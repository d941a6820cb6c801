import math
import warnings

import numpy as np
import pytest

from hmilab.datagen import DataStream, sample_planted_weights
from hmilab.errors import ValidationError
from hmilab.model import hermite_series_link, link_preset, make_scale_free_target
from hmilab.spectral import custom_preprocessing, rational_preprocessing, recovery_report, spectral_estimator
from hmilab.theory import (OutOfSupportWarning, build_label_measure, bulk_edge, conditional_moment_G,
                           prediction_record, solve_spikes, write_predictions)
from hmilab.theory.rmt import _Curves
from oracles import G_single_index_quad

RAT = rational_preprocessing()


def _spec(m=3, link="he2", delta=0.1, d=1000):
    return make_scale_free_target(m, 1.3, link, delta, d)


# ------------------------------------------------------------ label measure

def test_label_measure_moments():
    spec = _spec(3, "he2_he4")
    mu = build_label_measure(spec)
    m0, m1, m2 = mu.moments()
    assert abs(m0 - 1) <= 1e-8
    assert abs(m1) <= 1e-6
    assert abs(m2 - (spec.target_variance() + spec.noise_delta)) <= 1e-4


def test_label_measure_needs_noise():
    with pytest.raises(ValidationError):
        build_label_measure(_spec(delta=0.0))


# ------------------------------------------------------------------- G_k

def test_G_single_index_vs_adaptive_quadrature():
    spec = make_scale_free_target(1, 1.0, "he2", 0.5, 10)
    g = link_preset("he2")
    ref = G_single_index_quad(lambda z: float(g(np.array([z]))[0]), 0.5, 1.0)
    assert abs(conditional_moment_G(spec, 1, 1.0) - ref) <= 1e-6


@pytest.mark.parametrize("y", [-0.7, 0.0, 0.4, 2.5])
def test_G_single_index_grid_of_labels(y):
    spec = make_scale_free_target(1, 1.0, "he2_he4", 0.2, 10)
    g = link_preset("he2_he4")
    ref = G_single_index_quad(lambda z: float(g(np.array([z]))[0]), 0.2, y)
    assert abs(conditional_moment_G(spec, 1, y) - ref) <= 1e-6


def test_G_zero_coefficient_diagnostic():
    spec = _spec(2)
    ys = np.linspace(-1, 2, 7)
    G = conditional_moment_G(spec, 2, ys, coefficients=[spec.a_star[0], 0.0])
    assert np.max(np.abs(G)) <= 1e-10


def test_G_multi_index_matches_grid_measure():
    spec = _spec(3, "he2_he4")
    mu = build_label_measure(spec)
    ys, table = mu.conditional_table(points=9, rel_floor=1e-3)
    direct = conditional_moment_G(spec, 2, ys)
    np.testing.assert_allclose(direct, table[1], atol=2e-3)


@pytest.mark.parametrize("name", ["he2", "he2_he4", "tanh_sq"])
def test_G_reflection_parity(name):
    # Y -> -Y corresponds to g -> -g, hence G_k(y; g) = G_k(-y; -g)
    link = link_preset(name)
    neg = hermite_series_link([-c for c in link.hermite_coefficients], "neg") if name != "tanh_sq" else None
    if neg is None:
        from hmilab.model import custom_even_link
        neg = custom_even_link(lambda z: -link(z), "neg_tanh_sq", max_order=16)
    s_pos = make_scale_free_target(2, 1.3, name, 0.2, 10)
    s_neg = make_scale_free_target(2, 1.3, neg, 0.2, 10)
    ys = np.linspace(-1.5, 1.5, 7)
    for k in (1, 2):
        np.testing.assert_allclose(conditional_moment_G(s_pos, k, ys), conditional_moment_G(s_neg, k, -ys),
                                   atol=1e-8)


def test_G_out_of_support_flag():
    spec = make_scale_free_target(1, 1.0, "he2", 0.01, 10)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        v = conditional_moment_G(spec, 1, -500.0)
    assert v == 0.0
    assert any(issubclass(w.category, OutOfSupportWarning) for w in rec)


# ------------------------------------------------------------- bulk edge

@pytest.mark.parametrize("alpha", [0.5, 4.0, 30.0])
def test_bulk_edge_constant_preprocessing(alpha):
    c = 0.5
    prep = custom_preprocessing(lambda y: np.full_like(y, c), tau=c)
    t, lam = bulk_edge(_spec(2), prep, alpha)
    assert t == pytest.approx(c * (1 + math.sqrt(alpha)), rel=1e-9)
    assert lam == pytest.approx(c * (1 + math.sqrt(alpha)) ** 2, rel=1e-9)


def test_bulk_edge_small_alpha_limit():
    t, _ = bulk_edge(_spec(3), RAT, 1e-4)
    assert 0.0 <= t - RAT.tau <= 0.05 * RAT.tau


def test_zeta_increasing_above_edge():
    for link in ("he2", "he2_he4", "tanh_sq"):
        spec = _spec(5, link)
        mu = build_label_measure(spec)
        for alpha in (2.0, 50.0, 500.0):
            c = _Curves(mu, RAT, alpha)
            t, _ = bulk_edge(spec, RAT, alpha, mu)
            ts = t + np.geomspace(1e-6, 1e3, 200)
            z = np.array([c.zeta(x) for x in ts])
            assert np.all(np.diff(z) > 0)


# ---------------------------------------------------------------- spikes

def test_no_spikes_below_all_thresholds():
    assert solve_spikes(_spec(5), RAT, 0.01).spike_count == 0


def test_spike_invariants_and_monotone_count():
    spec = _spec(10, "tanh_sq", d=400)
    mu = build_label_measure(spec)
    counts = []
    for alpha in np.geomspace(1, 5000, 25):
        p = solve_spikes(spec, RAT, float(alpha), mu, tabulate=False)
        counts.append(p.spike_count)
        for s in p.spikes:
            assert s.t >= p.bulk_edge_t
            assert s.eigenvalue >= p.bulk_edge_lambda
            assert 0.0 <= s.overlap_sq <= 1.0
        lam = [s.eigenvalue for s in p.spikes]
        assert lam == sorted(lam, reverse=True)
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 10


def test_large_alpha_spike_scaling():
    spec = _spec(3)
    mu = build_label_measure(spec)
    ratios = []
    for alpha in (1e3, 1e4):
        p = solve_spikes(spec, RAT, alpha, mu, tabulate=False)
        ratios.append([p.spike(k).t / (spec.a_star[k - 1] * alpha) for k in (1, 2, 3)])
    r3, r4 = np.array(ratios)
    assert np.all(np.abs(r4 / r3 - 1) <= 0.2)


def test_conditional_table_returned():
    p = solve_spikes(_spec(2), RAT, 20.0)
    y, G = p.conditional_moments
    assert G.shape == (2, y.size)


def test_prediction_record_and_dump(tmp_path):
    spec = _spec(3)
    rec = prediction_record(spec, 50.0, RAT)
    assert {"regime", "exponents", "thresholds", "spikes", "bulk_edge", "decomposition"} <= set(rec)
    assert rec["regime"] == "rich_heavy" and len(rec["spikes"]) == 3
    path = write_predictions(tmp_path / "p.json", [rec])
    import json
    assert json.loads(path.read_text())[0]["alpha"] == 50.0


# ------------------------------------------------- simulation agreement

def _empirical(spec, alpha, seeds, k_top):
    edge, spikes, ov = [], [], []
    for s in range(seeds):
        W = sample_planted_weights(spec, 1000 * s)
        est = spectral_estimator(DataStream(spec, W, int(alpha * spec.dim_d), 1000 * s + 1), RAT,
                                 r_max=spec.m_star)
        edge.append(est.eigenvalues[k_top])
        spikes.append(est.eigenvalues[:k_top])
        ov.append(recovery_report(est, spec, W).overlaps[0, 0] ** 2 if est.spike_count else 0.0)
    return float(np.mean(edge)), np.mean(spikes, axis=0), float(np.mean(ov))


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="top bulk eigenvalue at d=1000 sits below the asymptotic edge by a "
                   "finite-size shift of order d^(-2/3) times the bulk width, about 7% of this small edge value")
def test_twenty_index_edge_alpha_164():
    spec = _spec(20, "he2_he4")
    pred = solve_spikes(spec, RAT, 164.0, tabulate=False)
    edge, _, _ = _empirical(spec, 164.0, 4, pred.spike_count)
    assert abs(pred.bulk_edge_lambda / edge - 1) <= 0.05


@pytest.mark.slow
def test_twenty_index_top_overlap_alpha_611():
    spec = _spec(20, "he2_he4")
    pred = solve_spikes(spec, RAT, 611.0, tabulate=False)
    _, _, ov = _empirical(spec, 611.0, 4, pred.spike_count)
    assert abs(pred.spike(1).overlap_sq - ov) <= 0.1
