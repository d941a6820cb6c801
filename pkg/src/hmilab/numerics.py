"""Shared numerical kernels.

Quadrature rules, the dense symmetric eigensolver, scalar root finding and
maximization, Gram-Schmidt and the seeded Gaussian streams used by the data
generator all live here so that every other module goes through a single,
tested implementation.

Random streams use numpy's Philox-4x64-10 counter-based bit generator keyed
by a :class:`numpy.random.SeedSequence` built from ``(seed, *keys)``.  A block
of data indexed by ``(seed, block_index)`` is therefore reproducible on its
own, independent of how many other blocks were drawn before it or on which
thread.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import BracketError, DegenerateInputError, NumericalError, ValidationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, fn(self.nodes)))

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column j pairs with eigenvalues[j]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


_rule_lock = threading.Lock()


@functools.lru_cache(maxsize=None)
def _hermite_rule(n_nodes: int) -> QuadratureRule:
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / _SQRT_2PI
    # hermegauss weights are accurate to a few ulps; renormalize the total mass
    w = w / math.fsum(w)
    return QuadratureRule(_freeze(x), _freeze(w), "gauss_hermite_probabilist")


def gauss_hermite(n_nodes: int) -> QuadratureRule:
    """Gauss-Hermite rule for E[f(z)], z ~ N(0, 1).

    Exact for polynomials of degree <= 2 * n_nodes - 1.  Rules are cached per
    node count.
    """
    if not 2 <= int(n_nodes) <= 512:
        raise ValidationError(f"n_nodes must lie in [2, 512], got {n_nodes}")
    with _rule_lock:
        return _hermite_rule(int(n_nodes))


@functools.lru_cache(maxsize=None)
def _legendre_rule(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return _freeze(x), _freeze(w)


def gauss_legendre(n_nodes: int, lo: float = -1.0, hi: float = 1.0, panels: int = 1) -> QuadratureRule:
    """Composite Gauss-Legendre rule for the plain integral over [lo, hi]."""
    if n_nodes < 2 or panels < 1:
        raise ValidationError("gauss_legendre needs n_nodes >= 2 and panels >= 1")
    if not hi > lo:
        raise ValidationError("gauss_legendre needs hi > lo")
    with _rule_lock:
        x, w = _legendre_rule(int(n_nodes))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return QuadratureRule(_freeze(nodes), _freeze(weights), "gauss_legendre")


def gaussian_expectation_rule(n_nodes: int = 8, z_max: float = 10.0, panels: int = 250) -> QuadratureRule:
    """E[f(z)] for z ~ N(0, 1) via composite Gauss-Legendre on [-z_max, z_max].

    Used where the integrand is much narrower than the Gaussian weight (small
    label noise), a regime in which a global Gauss-Hermite rule loses accuracy.
    """
    rule = gauss_legendre(n_nodes, -z_max, z_max, panels)
    w = rule.weights * np.exp(-0.5 * rule.nodes**2) / _SQRT_2PI
    return QuadratureRule(rule.nodes, _freeze(w), "gauss_legendre")


def hermite_he(k: int, z):
    """Probabilists' Hermite polynomial He_k evaluated at z (three-term recurrence)."""
    z = np.asarray(z, dtype=np.float64)
    if k < 0:
        raise ValidationError("Hermite order must be nonnegative")
    h_prev = np.ones_like(z)
    if k == 0:
        return h_prev
    h = z.copy()
    for j in range(1, k):
        h_prev, h = h, z * h - j * h_prev
    return h


def sym_eig(A, *, rtol_symmetry: float = 1e-10) -> EigenDecomposition:
    """Full eigendecomposition of a dense real symmetric matrix.

    Householder tridiagonalization followed by implicit-shift QL/QR (LAPACK
    ``dsyev``).  Eigenvalues are returned in descending order; each
    eigenvector is signed so that its largest-magnitude entry is positive.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValidationError(f"sym_eig needs a square matrix, got shape {A.shape}")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > rtol_symmetry * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    if not np.all(np.isfinite(A)):
        raise NumericalError("sym_eig input contains non-finite entries")
    try:
        vals, vecs = scipy.linalg.eigh(0.5 * (A + A.T), driver="ev", check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigensolver did not converge: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs *= signs
    return EigenDecomposition(vals, vecs)


def find_root_bracketed(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of f on [lo, hi] by Brent's bisection/secant/inverse-quadratic hybrid."""
    flo, fhi = f(lo), f(hi)
    if math.isnan(flo) or math.isnan(fhi):
        raise NumericalError("NaN at bracket endpoint")
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}")
    rtol = max(tol, 4.0 * np.finfo(float).eps)
    return float(scipy.optimize.brentq(f, lo, hi, xtol=tol, rtol=rtol, maxiter=500))


def _golden(f, a: float, b: float, tol: float) -> tuple[float, float]:
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol * max(1.0, abs(c) + abs(d)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        if math.isnan(fc) or math.isnan(fd):
            raise NumericalError("NaN encountered during golden-section search")
    return (c, fc) if fc >= fd else (d, fd)


def maximize_1d(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10,
                grid_points: int = 1024) -> tuple[float, float]:
    """Global maximum of a scalar function on [lo, hi].

    A uniform grid scan locates the best cell (so a bimodal objective cannot
    trap the search in a secondary mode) and golden-section search refines it.
    Returns ``(argmax, max)``.
    """
    if not hi > lo:
        raise ValidationError("maximize_1d needs lo < hi")
    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([f(float(m)) for m in grid])
    if np.any(np.isnan(vals)):
        raise NumericalError("NaN encountered in objective on the scan grid")
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid_points - 1)]
    x, fx = _golden(f, float(a), float(b), tol)
    if vals[i] >= fx:
        return float(grid[i]), float(vals[i])
    return float(x), float(fx)


def orthonormalize_rows(M, scale: float = 1.0, *, pivot_tol: float = 1e-12) -> np.ndarray:
    """Rows made pairwise orthogonal with squared norm ``scale``.

    Gram-Schmidt with one full re-orthogonalization pass per row (CGS2),
    which matches modified Gram-Schmidt with re-orthogonalization in
    stability while vectorizing the projections.
    """
    Q = np.array(M, dtype=np.float64, copy=True)
    if Q.ndim != 2:
        raise ValidationError("orthonormalize_rows needs a 2-D array")
    k, d = Q.shape
    if k > d:
        raise ValidationError(f"cannot orthogonalize {k} rows in dimension {d}")
    for i in range(k):
        ref = np.linalg.norm(Q[i])
        if i:
            for _ in range(2):
                Q[i] -= Q[:i].T @ (Q[:i] @ Q[i])
        nrm = np.linalg.norm(Q[i])
        if nrm == 0.0 or nrm < pivot_tol * max(ref, 1.0):
            raise DegenerateInputError(f"row {i} is (numerically) linearly dependent on previous rows")
        Q[i] /= nrm
    return Q * math.sqrt(scale)


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def standard_normal(seed: int, shape, *keys: int) -> np.ndarray:
    return rng_stream(seed, *keys).standard_normal(shape)
