"""Hierarchical multi-index targets, link functions and coefficient profiles.

Hermite convention
------------------
Links are expanded in probabilists' Hermite polynomials as

    g(z) = sum_j c_j / j! * He_j(z),    c_j = E[g(z) He_j(z)],   z ~ N(0, 1).

Under this "series" convention Parseval reads E[g^2] = sum_j c_j^2 / j!,
Mehler's formula gives E[g(z1) g(z2)] = sum_j c_j^2 / j! * rho^j for
corr(z1, z2) = rho, and Stein's lemma gives c_2 = E[g''(z)].  So the
preset ``he2`` (g = He_2 / 2) has c_2 = 1 and ``he2_he4``
(g = He_2 / 2 + He_4 / 48) has c_2 = 1, c_4 = 1/2.

The "projection" convention c_j / j! (the coefficient of He_j itself) is
available from :func:`hermite_coefficients_of` for comparison with sources
that normalize that way; ``he2`` then reads c_2 = 1/2.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import NumericalError, ValidationError

HERMITE_SERIES = "hermite_series"
POLYNOMIAL = "polynomial"
CUSTOM_EVEN = "custom_even"


@dataclass(frozen=True, eq=False)
class LinkFunction:
    """Scalar link g with its Hermite coefficients (series convention)."""

    kind: str
    hermite_coefficients: tuple[float, ...]
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = "custom"

    def __call__(self, z):
        return self.evaluator(np.asarray(z, dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, LinkFunction):
            return NotImplemented
        return (self.kind, self.name, self.hermite_coefficients) == (
            other.kind, other.name, other.hermite_coefficients)

    def __hash__(self):
        return hash((self.kind, self.name, self.hermite_coefficients))

    @property
    def config_token(self) -> str:
        if self.name in LINK_PRESETS:
            return self.name
        if self.kind == HERMITE_SERIES:
            return "hermite:" + ",".join(repr(float(c)) for c in self.hermite_coefficients)
        raise ValidationError(f"link {self.name!r} has no plain-text representation")


def _series_evaluator(coeffs: Sequence[float]):
    scaled = np.array([c / math.factorial(j) for j, c in enumerate(coeffs)], dtype=np.float64)

    def g(z):
        return np.polynomial.hermite_e.hermeval(z, scaled)

    return g


def hermite_series_link(coefficients: Sequence[float], name: str = "hermite") -> LinkFunction:
    """Link g = sum_j c_j / j! He_j from its series coefficients."""
    coeffs = tuple(float(c) for c in coefficients)
    return LinkFunction(HERMITE_SERIES, coeffs, _series_evaluator(coeffs), name)


def polynomial_link(power_coefficients: Sequence[float], name: str = "polynomial") -> LinkFunction:
    """Link from monomial coefficients p_0 + p_1 z + ... (lowest order first)."""
    p = np.asarray(power_coefficients, dtype=np.float64)
    herm = np.polynomial.hermite_e.poly2herme(p)
    coeffs = tuple(float(h * math.factorial(j)) for j, h in enumerate(herm))

    def g(z):
        return np.polynomial.polynomial.polyval(z, p)

    return LinkFunction(POLYNOMIAL, coeffs, g, name)


def custom_even_link(fn: Callable[[np.ndarray], np.ndarray], name: str = "custom",
                     max_order: int = 12) -> LinkFunction:
    """Arbitrary link; Hermite coefficients are computed by quadrature."""
    probe = LinkFunction(CUSTOM_EVEN, (), fn, name)
    coeffs = tuple(hermite_coefficients_of(probe, max_order))
    return LinkFunction(CUSTOM_EVEN, coeffs, fn, name)


def _tanh_sq_link() -> LinkFunction:
    rule = numerics.gauss_hermite(256)
    mean = rule.expect(lambda z: np.tanh(z) ** 2)

    def g(z):
        return np.tanh(z) ** 2 - mean

    return custom_even_link(g, "tanh_sq", max_order=16)


LINK_PRESETS: dict[str, Callable[[], LinkFunction]] = {
    "he2": lambda: hermite_series_link((0.0, 0.0, 1.0), "he2"),
    "he2_he4": lambda: hermite_series_link((0.0, 0.0, 1.0, 0.0, 0.5), "he2_he4"),
    "tanh_sq": _tanh_sq_link,
}

_preset_cache: dict[str, LinkFunction] = {}


def link_preset(name: str) -> LinkFunction:
    if name not in LINK_PRESETS:
        raise ValidationError(f"unknown link preset {name!r}; choose from {sorted(LINK_PRESETS)}")
    if name not in _preset_cache:
        _preset_cache[name] = LINK_PRESETS[name]()
    return _preset_cache[name]


def parse_link(token: str) -> LinkFunction:
    token = token.strip()
    if token.startswith("hermite:"):
        return hermite_series_link([float(c) for c in token[len("hermite:"):].split(",")])
    return link_preset(token)


def hermite_coefficients_of(link: LinkFunction, max_order: int, convention: str = "series") -> list[float]:
    """Hermite coefficients c_0..c_max_order of a link by Gauss-Hermite quadrature.

    The rule uses 2 * max_order + 32 nodes and is checked against a rule with
    twice as many nodes (capped at 512); disagreement beyond 1e-6 in the
    orthonormal basis He_j / sqrt(j!) raises :class:`NumericalError`.
    """
    if max_order < 0:
        raise ValidationError("max_order must be nonnegative")
    if convention not in ("series", "projection"):
        raise ValidationError(f"unknown Hermite convention {convention!r}")
    n1 = min(2 * max_order + 32, 512)
    n2 = min(2 * n1, 512)

    def project(n):
        rule = numerics.gauss_hermite(n)
        gz = link(rule.nodes)
        return np.array([np.dot(rule.weights, gz * numerics.hermite_he(j, rule.nodes))
                         for j in range(max_order + 1)])

    c1, c2 = project(n1), project(n2)
    norms = np.sqrt([math.factorial(j) for j in range(max_order + 1)])
    diff = float(np.max(np.abs(c1 - c2) / norms))
    if n2 > n1 and diff > 1e-6:
        raise NumericalError(f"Hermite projection did not converge between {n1} and {n2} nodes "
                             f"(max normalized diff {diff:.2e})")
    out = c2
    if convention == "projection":
        out = out / np.array([math.factorial(j) for j in range(max_order + 1)], dtype=np.float64)
    return [float(c) for c in out]


def gaussian_moment(fn: Callable[[np.ndarray], np.ndarray], n_nodes: int = 200) -> float:
    """E[fn(z)] for z ~ N(0,1) by Gauss-Hermite quadrature."""
    return numerics.gauss_hermite(n_nodes).expect(fn)


@dataclass(frozen=True)
class AssumptionReport:
    even: bool
    centered: bool
    second_moment: float
    mean_second_derivative: float
    lower: float
    upper: float

    @property
    def ok(self) -> bool:
        return (self.even and self.centered
                and self.lower < self.second_moment < self.upper
                and self.lower < abs(self.mean_second_derivative) < self.upper)


def check_assumptions(link: LinkFunction, lower: float = 0.05, upper: float = 50.0) -> AssumptionReport:
    """Evenness, centering and the moment bounds a link must satisfy (callable check, never raises)."""
    z = np.linspace(-5.0, 5.0, 64)
    even = bool(np.max(np.abs(link(z) - link(-z))) <= 1e-10)
    rule = numerics.gauss_hermite(128)
    gz = link(rule.nodes)
    mean = float(np.dot(rule.weights, gz))
    second = float(np.dot(rule.weights, gz**2))
    # Stein: E[g''(z)] = E[g(z) He_2(z)]
    curv = float(np.dot(rule.weights, gz * (rule.nodes**2 - 1.0)))
    return AssumptionReport(even, abs(mean) <= 1e-8, second, curv, lower, upper)


@dataclass(frozen=True)
class TargetSpec:
    """f*(x) = sum_k a*_k g_k(<w*_k, x>) with label noise variance Delta."""

    m_star: int
    gamma: float
    links: tuple[LinkFunction, ...]
    a_star: tuple[float, ...]
    noise_delta: float
    dim_d: int

    def __post_init__(self):
        if self.m_star < 1 or self.dim_d < 1:
            raise ValidationError("m_star and dim_d must be positive")
        if self.m_star > self.dim_d:
            raise ValidationError(f"m_star={self.m_star} exceeds d={self.dim_d}")
        if len(self.links) != self.m_star or len(self.a_star) != self.m_star:
            raise ValidationError("links and a_star must both have m_star entries")
        if self.noise_delta < 0:
            raise ValidationError("noise_delta must be nonnegative")
        a = self.a_star
        if any(x <= 0 for x in a):
            raise ValidationError("coefficients must be positive")
        if any(a[i] <= a[i + 1] for i in range(len(a) - 1)):
            raise ValidationError("coefficients must be strictly decreasing")
        if abs(math.fsum(x * x for x in a) - 1.0) > 1e-12:
            raise ValidationError("coefficients must have unit sum of squares")

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.a_star, dtype=np.float64)

    @property
    def crossover_scale(self) -> float:
        """alpha at which the scarce and rich rate laws meet: m*^(2 gamma), or m* for gamma < 1/2."""
        if self.gamma > 0.5:
            return float(self.m_star) ** (2.0 * self.gamma)
        return float(self.m_star)

    @property
    def is_scale_free(self) -> bool:
        k = np.arange(1, self.m_star + 1, dtype=np.float64)
        prod = self.a * k**self.gamma
        return bool(np.max(np.abs(prod - prod[0])) <= 1e-10 * prod[0])

    @property
    def shared_link(self) -> LinkFunction | None:
        first = self.links[0]
        return first if all(l == first for l in self.links) else None

    def target_variance(self) -> float:
        """Var f*(x) = sum_k a_k^2 E[g_k^2] (links are centered, indices independent)."""
        return math.fsum(ak**2 * gaussian_moment(lambda z, g=g: g(z) ** 2)
                         for ak, g in zip(self.a_star, self.links))

    def to_config_block(self) -> str:
        lines = [f"m_star = {self.m_star}", f"gamma = {self.gamma!r}", f"d = {self.dim_d}",
                 f"delta = {self.noise_delta!r}"]
        shared = self.shared_link
        if shared is not None:
            lines.append(f"link = {shared.config_token}")
        else:
            lines.append("links = " + "; ".join(l.config_token for l in self.links))
        if not self.is_scale_free:
            lines.append("a_star = " + ", ".join(repr(x) for x in self.a_star))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config_block(cls, text_or_mapping) -> "TargetSpec":
        if isinstance(text_or_mapping, str):
            kv = {}
            for raw in text_or_mapping.splitlines():
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(f"malformed target line {raw!r}")
                key, val = line.split("=", 1)
                kv[key.strip()] = val.strip()
        else:
            kv = dict(text_or_mapping)
        try:
            m_star = int(kv["m_star"])
            gamma = float(kv["gamma"])
            d = int(kv["d"])
            delta = float(kv["delta"])
        except KeyError as exc:
            raise ValidationError(f"target block is missing key {exc.args[0]!r}") from None
        if "links" in kv:
            links = tuple(parse_link(t) for t in kv["links"].split(";"))
        else:
            links = (parse_link(kv.get("link", "he2")),) * m_star
        if "a_star" in kv:
            a = tuple(float(x) for x in kv["a_star"].split(","))
            return cls(m_star, gamma, links, a, delta, d)
        return _scale_free(m_star, gamma, links, delta, d)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_config_block().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PlantedWeights:
    W_star: np.ndarray  # m* x d, orthogonal rows with squared norm d

    def __post_init__(self):
        W = np.asarray(self.W_star, dtype=np.float64)
        if W.ndim != 2:
            raise ValidationError("W_star must be a matrix")
        W.setflags(write=False)
        object.__setattr__(self, "W_star", W)

    @property
    def m_star(self) -> int:
        return self.W_star.shape[0]

    @property
    def d(self) -> int:
        return self.W_star.shape[1]


def scale_free_coefficients(m_star: int, gamma: float) -> tuple[float, ...]:
    """a_k proportional to k^-gamma, normalized to unit sum of squares.

    For gamma < 1/2 the unnormalized profile k^-gamma * m*^(gamma - 1/2)
    differs from k^-gamma by a k-independent factor, so both normalize to
    the same vector.
    """
    raw = [k ** (-gamma) for k in range(1, m_star + 1)]
    norm = math.sqrt(math.fsum(r * r for r in raw))
    return tuple(r / norm for r in raw)


def _scale_free(m_star, gamma, links, delta, d) -> TargetSpec:
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    if m_star < 1:
        raise ValidationError("m_star must be >= 1")
    if m_star > d:
        raise ValidationError(f"m_star={m_star} exceeds d={d}")
    return TargetSpec(m_star, float(gamma), tuple(links), scale_free_coefficients(m_star, gamma),
                      float(delta), int(d))


def make_scale_free_target(m_star: int, gamma: float, link: LinkFunction | str | Sequence,
                           delta: float, d: int) -> TargetSpec:
    """Scale-free target with a*_k proportional to k^-gamma.

    ``link`` may be a single link (shared by every index), a preset name, or
    a sequence of m_star links.
    """
    if isinstance(link, str):
        links = (link_preset(link),) * m_star
    elif isinstance(link, LinkFunction):
        links = (link,) * m_star
    else:
        links = tuple(link_preset(l) if isinstance(l, str) else l for l in link)
    return _scale_free(m_star, gamma, links, delta, d)


def index_values(weights: PlantedWeights, X) -> np.ndarray:
    """z = W* x for every row of X (n x m*)."""
    return np.asarray(X, dtype=np.float64) @ weights.W_star.T


def target_from_indices(spec: TargetSpec, Z: np.ndarray) -> np.ndarray:
    shared = spec.shared_link
    if shared is not None:
        return shared(Z) @ spec.a
    out = np.zeros(Z.shape[0])
    for k, (ak, g) in enumerate(zip(spec.a_star, spec.links)):
        out += ak * g(Z[:, k])
    return out


def evaluate_target(spec: TargetSpec, weights: PlantedWeights, x) -> float | np.ndarray:
    """Noise-free target f*(x); x may be a single vector or an n x d matrix."""
    x = np.asarray(x, dtype=np.float64)
    if weights.d != spec.dim_d or weights.m_star != spec.m_star:
        raise ValidationError("planted weights do not match the target spec")
    if x.shape[-1] != spec.dim_d or x.ndim > 2:
        raise ValidationError(f"x must have trailing dimension d={spec.dim_d}, got shape {x.shape}")
    if x.ndim == 1:
        return float(target_from_indices(spec, index_values(weights, x[None, :]))[0])
    return target_from_indices(spec, index_values(weights, x))
