"""High-dimensional limit of the spectrum of T.

Every expectation over the label Y runs against a deterministic grid measure
(:class:`LabelMeasure`).  The law of Y = sum_k a_k g_k(z_k) + sqrt(Delta) xi
is obtained by depositing each summand's quadrature atoms on a uniform label
grid and convolving all summands with the noise kernel by FFT.  The same
construction with atoms weighted by (z_k^2 - 1) gives, for each k, the signed
density N_k(y) = p(y) G_k(y), so that by the tower property

    E[h(Y) G_k(Y)] = E[h(Y) (z_k^2 - 1)] = sum_y h(y) N_k(y) dy.

With this measure the bulk curve

    zeta(t) = t (1 + alpha E[T/(t - T)]),  zeta'(t) = 1 - alpha E[T^2/(t - T)^2],

is convex on t > tau, so the bulk edge is the root of zeta' (or tau itself
when zeta'(tau+) >= 0).  A spike for index k sits at the largest root above
the edge of  alpha^-1 = E[T/(t - T) G_k],  with eigenvalue zeta(t_k) and
squared overlap

    m_k^2 = zeta'(t_k) / (zeta'(t_k) + alpha E[T^2 z_k^2 / (t_k - T)^2]).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import numerics
from ..errors import BracketError, NumericalError, ValidationError
from ..model import LinkFunction, TargetSpec
from ..spectral import Preprocessing

log = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
NOISE_SPAN = 12.0  # noise kernel half-width in units of sqrt(Delta)
MAX_GRID = 1 << 22


class OutOfSupportWarning(RuntimeWarning):
    """Label value where the label density underflows; G is reported as 0."""


def _atoms(link: LinkFunction, a: float, z_max: float, panels: int):
    rule = numerics.gaussian_expectation_rule(8, z_max, panels)
    vals = a * np.asarray(link(rule.nodes), dtype=np.float64)
    w = rule.weights / math.fsum(rule.weights)
    return vals, w, w * (rule.nodes**2 - 1.0)


def _deposit(vals: np.ndarray, weights_list, h: float):
    """Cloud-in-cell deposit on a grid aligned to multiples of h; returns (origin_index, arrays)."""
    lo = int(math.floor(vals.min() / h))
    hi = int(math.ceil(vals.max() / h)) + 1
    pos = vals / h - lo
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    n = hi - lo + 2
    out = []
    for w in weights_list:
        arr = np.zeros(n)
        np.add.at(arr, i0, w * (1.0 - frac))
        np.add.at(arr, i0 + 1, w * frac)
        out.append(arr)
    return lo, out


@dataclass(frozen=True)
class LabelMeasure:
    """Grid representation of the label law and its (z_k^2 - 1)-weighted versions.

    ``density`` and ``weighted[k]`` are densities on ``y`` (spacing ``h``);
    expectations are plain Riemann sums.
    """

    y: np.ndarray
    h: float
    density: np.ndarray
    weighted: np.ndarray  # m x len(y)
    noise_delta: float

    @property
    def m(self) -> int:
        return self.weighted.shape[0]

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(values, self.density) * self.h)

    def expect_weighted(self, values: np.ndarray, k: int) -> float:
        """E[values(Y) (z_k^2 - 1)] for 0-based k."""
        return float(np.dot(values, self.weighted[k]) * self.h)

    def moments(self, orders: Sequence[int] = (0, 1, 2)) -> list[float]:
        return [self.expect(self.y**j) for j in orders]

    def conditional_table(self, points: int = 257, rel_floor: float = 1e-10):
        """(y, G) with G[k] = N_k / p on a subsampled grid where p is not negligible."""
        keep = self.density > rel_floor * self.density.max()
        idx = np.flatnonzero(keep)
        idx = idx[np.linspace(0, idx.size - 1, min(points, idx.size)).round().astype(int)]
        return self.y[idx], self.weighted[:, idx] / self.density[idx]


def build_label_measure(spec: TargetSpec, *, coefficients: Sequence[float] | None = None,
                        exclude: int | None = None, points_per_sd: int = 40, z_max: float = 8.0,
                        panels: int = 400) -> LabelMeasure:
    """Label law on a uniform grid with spacing sqrt(Delta)/points_per_sd.

    ``exclude`` (0-based) drops one index from the sum, giving the law of
    the remaining indices plus noise.
    """
    if not spec.noise_delta > 0:
        raise ValidationError("the label density needs Delta > 0")
    coeffs = list(spec.a_star if coefficients is None else coefficients)
    if len(coeffs) != spec.m_star:
        raise ValidationError("coefficients must have m_star entries")
    sd = math.sqrt(spec.noise_delta)
    comps = [k for k in range(spec.m_star) if k != exclude]
    atoms = [_atoms(spec.links[k], coeffs[k], z_max, panels) for k in comps]
    span = sum(v.max() - v.min() for v, _, _ in atoms) + 2 * NOISE_SPAN * sd
    h = sd / points_per_sd
    if span / h > MAX_GRID:
        h = span / MAX_GRID
    origin = 0
    plain_ffts, weighted_ffts = [], []
    lengths = []
    deposits = []
    for vals, w, wz in atoms:
        lo, (pa, qa) = _deposit(vals, (w, wz), h)
        origin += lo
        deposits.append((pa, qa))
        lengths.append(pa.size)
    nk = int(math.ceil(NOISE_SPAN * sd / h))
    kern = np.exp(-0.5 * (np.arange(-nk, nk + 1) * h / sd) ** 2)
    kern /= kern.sum()
    origin -= nk
    total = sum(lengths) + kern.size
    nfft = 1 << int(math.ceil(math.log2(total)))
    for pa, qa in deposits:
        plain_ffts.append(np.fft.rfft(pa, nfft))
        weighted_ffts.append(np.fft.rfft(qa, nfft))
    base = np.fft.rfft(kern, nfft)
    # prefix/suffix products give each "all but k" convolution without division
    n = len(plain_ffts)
    prefix = [base]
    for F in plain_ffts:
        prefix.append(prefix[-1] * F)
    suffix = [np.ones_like(base)] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] * plain_ffts[i]
    length = total
    dens = np.fft.irfft(prefix[n], nfft)[:length]
    weighted = np.zeros((spec.m_star, length))
    for i, k in enumerate(comps):
        weighted[k] = np.fft.irfft(prefix[i] * suffix[i + 1] * weighted_ffts[i], nfft)[:length]
    y = (origin + np.arange(length)) * h
    dens = np.clip(dens, 0.0, None) / h
    weighted /= h
    dens.setflags(write=False)
    weighted.setflags(write=False)
    y.setflags(write=False)
    return LabelMeasure(y, h, dens, weighted, spec.noise_delta)


# ------------------------------------------------------------- G_k(y) direct

def conditional_moment_G(spec: TargetSpec, k: int, y, *, coefficients: Sequence[float] | None = None,
                         rule: numerics.QuadratureRule | None = None):
    """G_k(y) = E[z_k^2 - 1 | Y = y] for 1-based index k.

    The other indices and the noise enter through the density q of their sum
    (exactly Gaussian when m* = 1, otherwise the grid measure, interpolated);
    z_k is integrated with a composite Gauss-Legendre rule under the Gaussian
    weight.  Labels where the density underflows give 0 and an
    :class:`OutOfSupportWarning`.
    """
    if not spec.noise_delta > 0:
        raise ValidationError("G_k(y) needs Delta > 0")
    if not 1 <= k <= spec.m_star:
        raise ValidationError(f"k must lie in [1, {spec.m_star}]")
    coeffs = list(spec.a_star if coefficients is None else coefficients)
    rule = rule or numerics.gaussian_expectation_rule(8, 10.0, 250)
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
    shift = coeffs[k - 1] * np.asarray(spec.links[k - 1](rule.nodes), dtype=np.float64)
    arg = y_arr[:, None] - shift[None, :]
    if spec.m_star == 1:
        var = spec.noise_delta
        q = np.exp(-0.5 * arg**2 / var) / math.sqrt(2 * math.pi * var)
    else:
        rest = build_label_measure(spec, coefficients=coeffs, exclude=k - 1)
        q = np.interp(arg.ravel(), rest.y, rest.density, left=0.0, right=0.0).reshape(arg.shape)
    p = q @ rule.weights
    num = q @ (rule.weights * (rule.nodes**2 - 1.0))
    out = np.zeros_like(y_arr)
    ok = p > 1e-290
    out[ok] = num[ok] / p[ok]
    if not np.all(ok):
        warnings.warn(f"label density underflows at {int((~ok).sum())} point(s); G set to 0",
                      OutOfSupportWarning, stacklevel=2)
    return float(out[0]) if np.ndim(y) == 0 else out


# --------------------------------------------------------------- bulk/spikes

class _Curves:
    """zeta, zeta' and the spike functions for one (measure, prep, alpha)."""

    def __init__(self, measure: LabelMeasure, prep: Preprocessing, alpha: float):
        if not alpha > 0:
            raise ValidationError("alpha must be positive")
        self.mu = measure
        self.tau = float(prep.tau)
        self.alpha = float(alpha)
        self.T = prep(measure.y)
        # grid mass sitting at T = tau makes zeta'(tau+) = -inf
        self.at_tau = bool(np.any((self.T >= self.tau * (1 - 1e-13)) & (measure.density > 0)))

    def _r(self, t):
        return self.T / (t - self.T)

    def zeta(self, t: float) -> float:
        return t * (1.0 + self.alpha * self.mu.expect(self._r(t)))

    def dzeta(self, t: float) -> float:
        return 1.0 - self.alpha * self.mu.expect(self._r(t) ** 2)

    def spike_fn(self, t: float, k: int) -> float:
        return self.alpha * self.mu.expect_weighted(self._r(t), k) - 1.0

    def overlap_sq(self, t: float, k: int) -> float:
        r2 = self._r(t) ** 2
        tail = self.alpha * (self.mu.expect_weighted(r2, k) + self.mu.expect(r2))
        dz = self.dzeta(t)
        return float(min(max(dz / (dz + tail), 0.0), 1.0))


def _edge(c: _Curves) -> float:
    lo = c.tau * (1.0 + 1e-12)
    if not c.at_tau and c.dzeta(c.tau) >= 0.0:
        return c.tau
    hi = c.tau + max(c.tau, 1.0)
    for _ in range(200):
        if c.dzeta(hi) > 0:
            break
        hi = c.tau + 2.0 * (hi - c.tau)
    else:
        raise NumericalError("zeta has no interior minimum within the bracket cap")
    return numerics.find_root_bracketed(c.dzeta, lo, hi, tol=1e-13 * hi)


def bulk_edge(spec: TargetSpec, prep: Preprocessing, alpha: float,
              label_sampler: LabelMeasure | None = None) -> tuple[float, float]:
    """(t_bar, zeta(t_bar)): minimizer of zeta over t >= tau and the predicted top-of-bulk eigenvalue."""
    measure = label_sampler if label_sampler is not None else build_label_measure(spec)
    c = _Curves(measure, prep, alpha)
    t = _edge(c)
    return t, c.zeta(t)


@dataclass(frozen=True)
class SpikePrediction:
    k: int  # 1-based
    t: float
    eigenvalue: float
    overlap_sq: float
    extra_roots: int = 0


@dataclass(frozen=True)
class RmtPrediction:
    alpha: float
    bulk_edge_t: float
    bulk_edge_lambda: float
    spikes: tuple[SpikePrediction, ...]
    below_threshold: tuple[int, ...]
    conditional_moments: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def spike_count(self) -> int:
        return len(self.spikes)

    def spike(self, k: int) -> SpikePrediction | None:
        for s in self.spikes:
            if s.k == k:
                return s
        return None

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "bulk_edge": {"t": self.bulk_edge_t, "lambda": self.bulk_edge_lambda},
            "spikes": [{"k": s.k, "t": s.t, "lambda": s.eigenvalue, "overlap_sq": s.overlap_sq}
                       for s in self.spikes],
            "below_threshold": list(self.below_threshold),
        }


def _largest_root(c: _Curves, k: int, t_bar: float) -> tuple[float | None, int]:
    signal = c.mu.expect_weighted(np.abs(c.T), k) + c.mu.expect(np.abs(c.T))
    t_hi = c.tau + 2.0 * c.alpha * max(signal, 1e-300) + 2.0 * abs(t_bar) + 1.0
    gaps = np.geomspace(1e-10 * max(t_bar, 1.0), t_hi - t_bar, 600)
    ts = t_bar + gaps
    vals = np.array([c.spike_fn(float(t), k) for t in ts])
    sign_changes = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
    if sign_changes.size == 0:
        return None, 0
    i = int(sign_changes[-1])
    root = numerics.find_root_bracketed(lambda t: c.spike_fn(t, k), float(ts[i]), float(ts[i + 1]),
                                        tol=1e-12 * float(ts[i + 1]))
    extras = int(sign_changes.size - 1)
    if extras:
        log.info("index %d: %d additional root(s) above the bulk edge ignored", k + 1, extras)
    return root, extras


def solve_spikes(spec: TargetSpec, prep: Preprocessing, alpha: float,
                 label_sampler: LabelMeasure | None = None, *, tabulate: bool = True) -> RmtPrediction:
    """Bulk edge plus, for each index, the spike location, eigenvalue and squared overlap."""
    measure = label_sampler if label_sampler is not None else build_label_measure(spec)
    c = _Curves(measure, prep, alpha)
    t_bar = _edge(c)
    spikes, below = [], []
    for k in range(spec.m_star):
        try:
            root, extras = _largest_root(c, k, t_bar)
        except BracketError:  # pragma: no cover - sign change located on the scan grid
            root, extras = None, 0
        if root is None or root < t_bar:
            below.append(k + 1)
            continue
        spikes.append(SpikePrediction(k + 1, root, c.zeta(root), c.overlap_sq(root, k), extras))
    table = measure.conditional_table() if tabulate else None
    return RmtPrediction(float(alpha), t_bar, c.zeta(t_bar), tuple(spikes), tuple(below), table)
