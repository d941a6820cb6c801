"""Single-index replica-symmetric potential in its Hermite-series form.

    f(m) = m + log(1 - m) + alpha * lambda * S(m),   S(m) = sum_{k>=2} c_k^2 / k! m^k,

with c_k = E[g(z) He_k(z)] (coefficient of He_k/k!).  The global maximizer
over m in [0, 1) is the asymptotic overlap; the information-theoretic
transition is the smallest alpha at which it leaves 0.  Since f > 0 somewhere
exactly when alpha * lambda exceeds (-m - log(1 - m)) / S(m), the transition
obeys D <= alpha * lambda <= c_2^-2 with D the infimum of that ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numerics
from ..errors import GenerativeExponentError, ValidationError
from ..model import LinkFunction, gaussian_moment, hermite_coefficients_of

M_UPPER = 1.0 - 1e-9
DEFAULT_ORDER = 12


@dataclass(frozen=True)
class FreeEntropyProblem:
    hermite_c: tuple[float, ...]
    lambda_snr: float
    alpha: float
    tail_bound: float = 0.0  # Parseval estimate of the truncated series mass

    def __post_init__(self):
        c = tuple(float(x) for x in self.hermite_c)
        object.__setattr__(self, "hermite_c", c)
        if len(c) < 3:
            raise ValidationError("need Hermite coefficients up to order >= 2")
        if abs(c[0]) > 1e-8 or abs(c[1]) > 1e-8:
            raise ValidationError("link must be even and centered (c_0 = c_1 = 0)")
        if abs(c[2]) <= 1e-12:
            raise GenerativeExponentError("c_2 = 0: the link does not have generative exponent 2")
        if not self.lambda_snr > 0:
            raise ValidationError("lambda_snr must be positive")
        if self.alpha < 0:
            raise ValidationError("alpha must be nonnegative")

    @classmethod
    def from_link(cls, link: LinkFunction, lambda_snr: float, alpha: float = 0.0,
                  order: int = DEFAULT_ORDER) -> "FreeEntropyProblem":
        c = hermite_coefficients_of(link, order)
        kept = math.fsum(c[k] ** 2 / math.factorial(k) for k in range(len(c)))
        tail = max(gaussian_moment(lambda z: link(z) ** 2) - kept, 0.0)
        return cls(tuple(c), lambda_snr, alpha, tail)

    def with_alpha(self, alpha: float) -> "FreeEntropyProblem":
        return FreeEntropyProblem(self.hermite_c, self.lambda_snr, alpha, self.tail_bound)

    @property
    def weights(self) -> np.ndarray:
        """c_k^2 / k! for k = 0..K (entries 0 and 1 forced to 0)."""
        c = np.asarray(self.hermite_c)
        w = np.array([c[k] ** 2 / math.factorial(k) for k in range(len(c))])
        w[:2] = 0.0
        return w


def _entropy_part(m: float) -> float:
    """m + log(1 - m), by its series near 0 to avoid cancellation."""
    if m < 1e-3:
        return -math.fsum(m**j / j for j in range(2, 9))
    return m + math.log1p(-m)


def _series(w: np.ndarray, m: float) -> float:
    return float(np.polynomial.polynomial.polyval(m, w))


def _series_prime(w: np.ndarray, m: float) -> float:
    return float(np.polynomial.polynomial.polyval(m, np.polynomial.polynomial.polyder(w)))


def f_rs(problem: FreeEntropyProblem, m: float) -> float:
    if not 0.0 <= m < 1.0:
        raise ValidationError("m must lie in [0, 1)")
    return _entropy_part(m) + problem.alpha * problem.lambda_snr * _series(problem.weights, m)


def f_rs_prime(problem: FreeEntropyProblem, m: float) -> float:
    """d f / d m = 1 - 1/(1 - m) + alpha lambda S'(m)."""
    return 1.0 - 1.0 / (1.0 - m) + problem.alpha * problem.lambda_snr * _series_prime(problem.weights, m)


def maximize_free_entropy(problem: FreeEntropyProblem) -> tuple[float, float]:
    """Global maximizer and maximum of f over [0, 1 - 1e-9]."""
    return numerics.maximize_1d(lambda m: f_rs(problem, m), 0.0, M_UPPER)


def lower_constant(problem: FreeEntropyProblem, points: int = 20000) -> float:
    """D = inf over m in (0, 1) of (-m - log(1 - m)) / S(m), by grid scan together with the m -> 0 limit."""
    w = problem.weights
    ms = np.concatenate([np.geomspace(1e-6, 1e-2, points // 4), np.linspace(1e-2, M_UPPER, points)])
    num = np.array([-_entropy_part(float(m)) for m in ms])
    den = np.polynomial.polynomial.polyval(ms, w)
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    limit = 1.0 / problem.hermite_c[2] ** 2
    return float(min(ratio.min(), limit))


def upper_constant(problem: FreeEntropyProblem) -> float:
    return 1.0 / problem.hermite_c[2] ** 2


def _has_nontrivial_max(problem: FreeEntropyProblem) -> bool:
    m, fmax = maximize_free_entropy(problem)
    return m > 0.0 and fmax > 0.0


def it_transition(problem: FreeEntropyProblem, rtol: float = 1e-9) -> float:
    """Smallest alpha at which the maximizer of f leaves m = 0 (bisection in log alpha)."""
    lo = 1e-8 / problem.lambda_snr
    hi = 1.0 / problem.lambda_snr
    while not _has_nontrivial_max(problem.with_alpha(hi)):
        lo, hi = hi, 2.0 * hi
        if hi > 1e12 / problem.lambda_snr:
            raise ValidationError("no transition found below alpha * lambda = 1e12")
    while hi - lo > rtol * hi:
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        if _has_nontrivial_max(problem.with_alpha(mid)):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class FreeEntropyResult:
    m_star_overlap: float
    f_max: float
    alpha_IT_bracket: tuple[float, float]
    D: float
    upper: float
    tail_bound: float

    def __iter__(self):
        yield self.m_star_overlap
        yield self.alpha_IT_bracket


def free_entropy_threshold(problem: FreeEntropyProblem) -> FreeEntropyResult:
    """Maximizer of f at the problem's alpha and the bracket D/lambda <= alpha_IT <= c_2^-2/lambda."""
    m, fmax = maximize_free_entropy(problem)
    D = lower_constant(problem)
    U = upper_constant(problem)
    lam = problem.lambda_snr
    return FreeEntropyResult(m, fmax, (D / lam, U / lam), D, U, problem.tail_bound)


def transition_scan(link: LinkFunction, lambdas: Sequence[float], order: int = DEFAULT_ORDER) -> list[dict]:
    """alpha_IT, its product with lambda and the bracket constants for each lambda."""
    out = []
    for lam in lambdas:
        prob = FreeEntropyProblem.from_link(link, lam, 0.0, order)
        a_it = it_transition(prob)
        out.append({"lambda": lam, "alpha_IT": a_it, "alpha_lambda": a_it * lam,
                    "D": lower_constant(prob), "upper": upper_constant(prob)})
    return out
