"""Closed-form rate laws for the optimal weighted MSE and its decomposition.

All Theta(.) statements carry a unit prefactor; ``constants_absorbed`` on the
results records that only exponents and ratios are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import UnsupportedBoundaryError, ValidationError
from ..model import TargetSpec

SCARCE_HEAVY = "scarce_heavy"
RICH_HEAVY = "rich_heavy"
SCARCE_LIGHT = "scarce_light"
RICH_LIGHT = "rich_light"
REGIMES = (SCARCE_HEAVY, RICH_HEAVY, SCARCE_LIGHT, RICH_LIGHT)

_LAWS = {
    SCARCE_HEAVY: "MSE ~ alpha^(-1 + 1/(2 gamma))",
    RICH_HEAVY: "MSE ~ m*/alpha",
    SCARCE_LIGHT: "MSE ~ 1 (plateau)",
    RICH_LIGHT: "MSE ~ m*/alpha",
}
CROSSOVER_DECADES = 1.0


def _check(spec: TargetSpec, alpha: float) -> None:
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if spec.gamma == 0.5:
        raise UnsupportedBoundaryError("gamma = 1/2 separates the heavy and light laws and is not covered")


def regime_exponent(regime: str, gamma: float) -> float:
    if regime == SCARCE_HEAVY:
        return -1.0 + 1.0 / (2.0 * gamma)
    if regime in (RICH_HEAVY, RICH_LIGHT):
        return -1.0
    if regime == SCARCE_LIGHT:
        return 0.0
    raise ValidationError(f"unknown regime {regime!r}")


def bayes_thresholds(spec: TargetSpec) -> list[float]:
    """alpha_k = k^(2 gamma) m*^((1 - 2 gamma)_+), k = 1..m*."""
    if spec.gamma == 0.5:
        raise UnsupportedBoundaryError("gamma = 1/2 is not covered")
    g2 = 2.0 * spec.gamma
    lift = float(spec.m_star) ** max(0.0, 1.0 - g2)
    return [k**g2 * lift for k in range(1, spec.m_star + 1)]


def k_alpha(spec: TargetSpec, alpha: float) -> int:
    """Number of indices whose threshold alpha exceeds, capped at m*."""
    _check(spec, alpha)
    lift = float(spec.m_star) ** max(0.0, 1.0 - 2.0 * spec.gamma)
    return int(min(round((alpha / lift) ** (1.0 / (2.0 * spec.gamma))), spec.m_star))


@dataclass(frozen=True)
class RatePrediction:
    alpha: float
    regime: str
    mse_scaling_exponent: float
    mse_prefactor_law: str
    k_alpha: int
    thresholds: tuple[float, ...]
    crossover_scale: float
    in_crossover: bool
    constants_absorbed: bool = field(default=True)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "regime": self.regime, "exponent": self.mse_scaling_exponent,
            "law": self.mse_prefactor_law, "k_alpha": self.k_alpha, "thresholds": list(self.thresholds),
            "crossover_scale": self.crossover_scale, "in_crossover": self.in_crossover,
            "constants_absorbed": self.constants_absorbed,
        }


def predict_rates(spec: TargetSpec, alpha: float) -> RatePrediction:
    _check(spec, alpha)
    heavy = spec.gamma > 0.5
    scale = spec.crossover_scale
    if heavy:
        regime = SCARCE_HEAVY if alpha < scale else RICH_HEAVY
    else:
        regime = SCARCE_LIGHT if alpha < scale else RICH_LIGHT
    half = 0.5 * CROSSOVER_DECADES
    near = abs(math.log10(alpha) - math.log10(scale)) <= half
    return RatePrediction(float(alpha), regime, regime_exponent(regime, spec.gamma), _LAWS[regime],
                          k_alpha(spec, alpha), tuple(bayes_thresholds(spec)), scale, near)


@dataclass(frozen=True)
class MseDecomposition:
    learned_part: float
    underfit_part: float
    regime: str
    k_alpha: int

    @property
    def total(self) -> float:
        return self.learned_part + self.underfit_part

    def __iter__(self):
        yield self.learned_part
        yield self.underfit_part


def predict_mse_decomposition(spec: TargetSpec, alpha: float) -> MseDecomposition:
    """learned = k_alpha / alpha; underfit = sum of a*_k^2 over indices beyond k_alpha."""
    pred = predict_rates(spec, alpha)
    ka = pred.k_alpha
    underfit = math.fsum(a * a for a in spec.a_star[ka:])
    return MseDecomposition(ka / alpha, underfit, pred.regime, ka)
