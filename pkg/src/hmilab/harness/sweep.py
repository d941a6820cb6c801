"""Sweeps over (alpha, seed) cells joined with theory predictions."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..datagen import DataStream, sample_planted_weights
from ..errors import HmiLabError, ValidationError
from ..readout import algorithm1_once
from ..spectral import recovery_report, spectral_estimator
from ..theory.rates import predict_rates
from ..theory.rmt import build_label_measure, solve_spikes
from .config import ExperimentConfig

PLANTED_STRIDE = 1000


def planted_seed(cfg: ExperimentConfig, s: int) -> int:
    return cfg.target.seed + PLANTED_STRIDE * s


def data_seed(cfg: ExperimentConfig, s: int, i: int) -> int:
    return cfg.target.seed + PLANTED_STRIDE * s + i + 1


@dataclass
class SweepRow:
    alpha: float
    seed: int
    n: int
    spike_count: int = -1
    overlaps: tuple[float, ...] = ()
    mse: tuple[float, ...] = ()
    weighted_mse: float = math.nan
    weighted_mse_greedy: float = math.nan
    excess_risk: float = math.nan
    excess_risk_stderr: float = math.nan
    regime: str = ""
    theory_exponent: float = math.nan
    theory_k_alpha: int = -1
    theory_spike_count: int = -1
    theory_spikes: tuple[float, ...] = ()
    error: str = ""
    wall_time_ms: float = 0.0
    eigenvalues: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return not self.error


def sweep_columns(m_star: int) -> list[str]:
    """Fixed CSV column order; the per-index blocks have m* entries each."""
    cols = ["alpha", "seed", "n", "spike_count", "weighted_mse", "weighted_mse_greedy", "excess_risk",
            "excess_risk_stderr", "regime", "theory_exponent", "theory_k_alpha", "theory_spike_count"]
    cols += [f"overlap_sq_{k}" for k in range(1, m_star + 1)]
    cols += [f"mse_{k}" for k in range(1, m_star + 1)]
    cols += [f"theory_spike_{k}" for k in range(1, m_star + 1)]
    return cols + ["error", "wall_time_ms"]


def _theory(cfg: ExperimentConfig, alphas: Sequence[float]) -> dict[float, tuple]:
    spec = cfg.spec()
    out = {}
    measure = build_label_measure(spec) if cfg.sweep.rmt and spec.noise_delta > 0 else None
    prep = cfg.prep()
    for a in alphas:
        try:
            rates = predict_rates(spec, a)
            entry = [rates.regime, rates.mse_scaling_exponent, rates.k_alpha, -1, ()]
        except HmiLabError:
            entry = ["", math.nan, -1, -1, ()]
        if measure is not None:
            try:
                pred = solve_spikes(spec, prep, a, measure, tabulate=False)
                entry[3] = pred.spike_count
                entry[4] = tuple(s.eigenvalue for s in pred.spikes)
            except HmiLabError:
                pass
        out[a] = tuple(entry)
    return out


def run_cell(cfg: ExperimentConfig, i: int, s: int, theory: dict | None = None) -> SweepRow:
    """One (alpha index i, seed index s) cell; failures are recorded in the row."""
    alpha = cfg.sweep.alphas[i]
    spec = cfg.spec()
    d = spec.dim_d
    n = max(int(round(alpha * d)), 1)
    if cfg.sweep.algorithm1:
        n = max(n + (n % 2), 2)
    row = SweepRow(alpha=alpha, seed=s, n=n)
    if theory and alpha in theory:
        row.regime, row.theory_exponent, row.theory_k_alpha, row.theory_spike_count, row.theory_spikes = theory[alpha]
    t0 = time.perf_counter()
    try:
        W = sample_planted_weights(spec, planted_seed(cfg, s))
        prep = cfg.prep()
        if cfg.sweep.algorithm1:
            run = algorithm1_once(spec, W, n, data_seed(cfg, s, i), p=cfg.network.width(n),
                                  ridge_lambda=cfg.network.ridge(n), prep=prep, activation=cfg.network.activation,
                                  gap_constant=cfg.estimator.gap_constant, gap_scale=cfg.estimator.gap_scale,
                                  r_max=cfg.r_max, n_test=cfg.sweep.n_test)
            est, rec = run.estimate, run.recovery
            row.excess_risk, row.excess_risk_stderr = run.report.risk, run.report.risk_stderr
        else:
            stream = DataStream(spec, W, n, data_seed(cfg, s, i))
            est = spectral_estimator(stream, prep, cfg.estimator.gap_constant, r_max=cfg.r_max,
                                     gap_scale=cfg.estimator.gap_scale)
            rec = recovery_report(est, spec, W)
        row.spike_count = est.spike_count
        row.overlaps = tuple(rec.overlap_sq(k) for k in range(spec.m_star))
        row.mse = tuple(float(x) for x in rec.mse_per_index)
        row.weighted_mse = rec.weighted_mse
        row.weighted_mse_greedy = rec.greedy_weighted_mse
        if cfg.sweep.spectra and s == 0:
            row.eigenvalues = est.eigenvalues
    except (HmiLabError, np.linalg.LinAlgError, FloatingPointError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return row


def run_sweep(cfg: ExperimentConfig, *, threads: int = 1, progress=None) -> list[SweepRow]:
    """All cells in (alpha, seed) order; the result does not depend on ``threads``."""
    theory = _theory(cfg, cfg.sweep.alphas)
    cells = [(i, s) for i in range(len(cfg.sweep.alphas)) for s in range(cfg.sweep.seeds)]
    if threads <= 1:
        rows = []
        for i, s in cells:
            rows.append(run_cell(cfg, i, s, theory))
            if progress:
                progress(rows[-1])
        return rows
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_cell, cfg, i, s, theory) for i, s in cells]
        rows = [f.result() for f in futures]
    if progress:
        for r in rows:
            progress(r)
    return rows


def mean_by_alpha(rows: Iterable[SweepRow], key: str = "weighted_mse") -> tuple[np.ndarray, np.ndarray]:
    """Distinct alphas (sorted) and the mean of ``key`` over successful rows."""
    acc: dict[float, list[float]] = {}
    for r in rows:
        v = getattr(r, key)
        if r.ok and math.isfinite(v):
            acc.setdefault(float(r.alpha), []).append(float(v))
    alphas = np.array(sorted(acc))
    return alphas, np.array([math.fsum(acc[a]) / len(acc[a]) for a in alphas])


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS y = b0 + b1 x; returns (slope, slope stderr, intercept)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise ValidationError("fit needs at least two distinct x values")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    icpt = ym - slope * xm
    resid = y - icpt - slope * x
    se = math.sqrt(float(resid @ resid) / (n - 2) / sxx) if n > 2 else math.inf
    return slope, se, float(icpt)


def _window(rows, alpha_window, key):
    alphas, means = mean_by_alpha(rows, key)
    lo, hi = alpha_window
    sel = (alphas >= lo) & (alphas <= hi) & (means > 0)
    if int(sel.sum()) < 4:
        raise ValidationError(f"need >= 4 distinct alpha in [{lo}, {hi}] with positive mean {key}, "
                              f"found {int(sel.sum())}")
    return np.log(alphas[sel]), np.log(means[sel])


def fit_scaling(rows: Iterable[SweepRow], alpha_window: tuple[float, float],
                key: str = "weighted_mse") -> tuple[float, float]:
    """Slope and standard error of log(mean key) against log(alpha) inside the window."""
    slope, se, _ = fit_line(*_window(list(rows), alpha_window, key))
    return slope, se


def crossover_alpha(rows: Iterable[SweepRow], scarce_window: tuple[float, float],
                    rich_window: tuple[float, float], key: str = "weighted_mse") -> float:
    """alpha where the two fitted power laws intersect."""
    rows = list(rows)
    s1, _, c1 = fit_line(*_window(rows, scarce_window, key))
    s2, _, c2 = fit_line(*_window(rows, rich_window, key))
    if s1 == s2:
        raise ValidationError("fitted lines are parallel")
    return math.exp((c2 - c1) / (s1 - s2))


def median_spike_counts(rows: Iterable[SweepRow]) -> dict[float, float]:
    acc: dict[float, list[int]] = {}
    for r in rows:
        if r.ok:
            acc.setdefault(float(r.alpha), []).append(r.spike_count)
    return {a: float(np.median(v)) for a, v in sorted(acc.items())}
