"""Label-preprocessed spectral estimator.

T = sum_i T(y_i) x_i x_i^T is accumulated in row blocks, decomposed densely,
and its top eigenvectors (selected by an eigen-gap rule) form the estimator
rows.  Recovery metrics, the threshold measurement over an alpha grid and the
power-iteration equivalent of small-step gradient descent are also here.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg.blas import dsyrk as _syrk

from . import numerics
from .datagen import Dataset, DataStream, sample_planted_weights
from .errors import DataError, ValidationError
from .model import PlantedWeights, TargetSpec

DEFAULT_GAP_CONSTANT = 3.0
GAP_SCALES = ("absolute", "bulk")


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class Preprocessing:
    """Bounded label transform T with tau = sup of its range."""

    kind: str
    tau: float
    scale: float = 1.0
    fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("rational", "clipped_identity", "custom"):
            raise ValidationError(f"unknown preprocessing kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValidationError("custom preprocessing needs fn")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError("preprocessing scale must be positive")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValidationError("tau must be positive and finite")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "rational":
            out = y / (1.0 + np.abs(y))
        elif self.kind == "clipped_identity":
            out = np.clip(y, -1.0, 1.0)
        else:
            out = np.asarray(self.fn(y), dtype=np.float64)
        return self.scale * out

    def scaled(self, c: float) -> "Preprocessing":
        return Preprocessing(self.kind, self.tau * c, self.scale * c, self.fn, self.name)

    @property
    def config_token(self) -> str:
        if self.kind == "custom":
            return self.name
        return self.kind if self.scale == 1.0 else f"{self.kind}:{self.scale!r}"

    def check_bounded(self, y_max: float = 1e6, points: int = 20001) -> float:
        """sup |T| over a dense symmetric log-spaced label grid; raises if unbounded or above tau."""
        pos = np.concatenate([[0.0], np.geomspace(1e-6, y_max, points // 2)])
        grid = np.concatenate([-pos[::-1], pos])
        vals = self(grid)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("preprocessing produces non-finite values")
        sup = float(np.max(np.abs(vals)))
        if float(np.max(vals)) > self.tau * (1 + 1e-12):
            raise ValidationError(f"preprocessing exceeds declared tau={self.tau}")
        return sup

    def check_nondegenerate(self, y) -> float:
        """Fraction of labels with |T(y)| > 1e-12; raises below 1%."""
        frac = float(np.mean(np.abs(self(y)) > 1e-12))
        if frac <= 0.01:
            raise ValidationError(f"preprocessing vanishes on {100 * (1 - frac):.1f}% of labels")
        return frac


def rational_preprocessing(scale: float = 1.0) -> Preprocessing:
    """T(y) = y / (1 + |y|)."""
    return Preprocessing("rational", float(scale), float(scale))


def clipped_identity(c: float = 1.0) -> Preprocessing:
    """T(y) = clip(y, -c, c)."""
    return Preprocessing("clipped_identity", float(c), float(c))


def custom_preprocessing(fn, tau: float, name: str = "custom") -> Preprocessing:
    return Preprocessing("custom", float(tau), 1.0, fn, name)


def parse_preprocessing(token: str) -> Preprocessing:
    kind, _, arg = token.strip().partition(":")
    c = float(arg) if arg else 1.0
    if kind == "rational":
        return rational_preprocessing(c)
    if kind in ("clipped_identity", "clipped"):
        return clipped_identity(c)
    raise ValidationError(f"unknown preprocessing preset {token!r}")


# ------------------------------------------------------------ matrix assembly

def _iter_blocks(source, block_size: int):
    if isinstance(source, DataStream):
        return source.blocks()
    if isinstance(source, Dataset):
        return source.blocks(block_size)
    if isinstance(source, tuple) and len(source) == 2:
        return Dataset(np.atleast_2d(source[0]), np.atleast_1d(source[1]), 0).blocks(block_size)
    raise ValidationError(f"unsupported data source {type(source).__name__}")


class _PairwiseSum:
    """Binary-counter pairwise reduction; the summation tree depends only on the block count."""

    def __init__(self):
        self._stack: list[tuple[int, np.ndarray]] = []

    def push(self, M: np.ndarray) -> None:
        level = 0
        while self._stack and self._stack[-1][0] == level:
            _, prev = self._stack.pop()
            M = prev + M
            level += 1
        self._stack.append((level, M))

    def total(self):
        if not self._stack:
            return None
        out = self._stack[-1][1]
        for _, M in reversed(self._stack[:-1]):
            out = M + out
        return out


def _block_product(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    """X^T diag(t) X as two symmetric rank-k updates (positive and negative weights).

    Only the upper triangle is formed; build_T mirrors it once at the end.
    """
    d = X.shape[1]
    out = np.zeros((d, d), order="F")
    for mask, sign in ((t > 0, 1.0), (t < 0, -1.0)):
        if not mask.any():
            continue
        B = X[mask] * np.sqrt(np.abs(t[mask]))[:, None]
        out = _syrk(alpha=sign, a=B, beta=1.0, c=out, trans=1, lower=0, overwrite_c=1)
    return out


def build_T(source, prep: Preprocessing, *, block_size: int = 4096, threads: int = 1) -> np.ndarray:
    """T = X^T diag(T(y)) X accumulated as a pairwise sum of per-block panel products.

    ``source`` is a :class:`Dataset`, a :class:`DataStream` or an ``(X, y)``
    pair.  The reduction order depends only on the number of blocks, so the
    result is bitwise identical for any ``threads``.
    """
    acc = _PairwiseSum()
    offset = [0]

    def prepared(blocks):
        for X, y in blocks:
            t = prep(y)
            bad = np.flatnonzero(~np.isfinite(t))
            if bad.size:
                raise DataError(f"non-finite preprocessed label at row {offset[0] + int(bad[0])}")
            offset[0] += len(y)
            yield X, t

    blocks = prepared(_iter_blocks(source, block_size))
    d = None
    if threads <= 1:
        for X, t in blocks:
            d = X.shape[1]
            acc.push(_block_product(X, t))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            window: list = []
            for X, t in blocks:
                d = X.shape[1]
                window.append(pool.submit(_block_product, X, t))
                if len(window) >= 2 * threads:
                    acc.push(window.pop(0).result())
            for fut in window:
                acc.push(fut.result())
    T = acc.total()
    if T is None:
        raise ValidationError("build_T needs at least one row")
    T = np.triu(T)
    T = T + np.triu(T, 1).T
    return np.ascontiguousarray(T)


def build_T_naive(X, y, prep: Preprocessing) -> np.ndarray:
    """Reference rank-one accumulation, one sample at a time."""
    X = np.asarray(X, dtype=np.float64)
    t = prep(y)
    T = np.zeros((X.shape[1], X.shape[1]))
    for i in range(X.shape[0]):
        T += t[i] * np.outer(X[i], X[i])
    return T


# ------------------------------------------------------------- spike detection

def gap_threshold(eigenvalues, d: int, gap_constant: float, gap_scale: str = "absolute") -> float:
    """Cut-off below which a consecutive eigen-gap is attributed to the bulk.

    ``absolute``: gap_constant / sqrt(d).  ``bulk``: the same quantity in
    units of the bulk's interquartile width, which keeps the rule invariant
    under rescaling of T and stable as the bulk widens with alpha.
    """
    if not gap_constant > 0:
        raise ValidationError("gap_constant must be positive")
    base = gap_constant / math.sqrt(d)
    if gap_scale == "absolute":
        return base
    if gap_scale == "bulk":
        lam = np.asarray(eigenvalues, dtype=np.float64)
        q75, q25 = np.percentile(lam, [75.0, 25.0])
        width = float(q75 - q25)
        return base * width if width > 0 else base
    raise ValidationError(f"gap_scale must be one of {GAP_SCALES}")


def gap_sequence(eigenvalues) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return lam[:-1] - lam[1:]


def detect_spikes(eig, d: int, gap_constant: float = DEFAULT_GAP_CONSTANT, *, r_max: int | None = None,
                  gap_scale: str = "absolute", threshold: float | None = None) -> int:
    """Number of leading eigenvalues retained by the gap rule.

    Returns the smallest 0-based i with lambda_i - lambda_{i+1} below the
    threshold (so i = 0 means no spikes), capped at r_max (default d // 4).
    """
    lam = np.asarray(getattr(eig, "eigenvalues", eig), dtype=np.float64)
    if lam.size < 2:
        raise ValidationError("detect_spikes needs at least two eigenvalues")
    if np.any(np.diff(lam) > 1e-12 * max(1.0, float(np.max(np.abs(lam))))):
        raise ValidationError("eigenvalues must be in descending order")
    if threshold is None:
        threshold = gap_threshold(lam, d, gap_constant, gap_scale)
    if r_max is None:
        r_max = max(d // 4, 1)
    r_max = min(int(r_max), lam.size - 1)
    gaps = gap_sequence(lam[: r_max + 1])
    below = np.flatnonzero(gaps < threshold)
    return int(below[0]) if below.size else r_max


@dataclass(frozen=True)
class SpectralEstimate:
    eigenvalues: np.ndarray
    spike_count: int
    W_hat: np.ndarray  # r x d, squared row norm d
    gap_threshold_used: float
    leading: np.ndarray = field(repr=False, default=None)  # r_max x d leading eigenvectors, same scaling

    @property
    def r(self) -> int:
        return self.spike_count

    @property
    def d(self) -> int:
        return self.leading.shape[1] if self.leading is not None else self.W_hat.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        return gap_sequence(self.eigenvalues)


def estimate_from_matrix(T: np.ndarray, gap_constant: float = DEFAULT_GAP_CONSTANT, *,
                         r_max: int | None = None, gap_scale: str = "absolute") -> SpectralEstimate:
    d = T.shape[0]
    eig = numerics.sym_eig(T)
    if r_max is None:
        r_max = max(d // 4, 1)
    r_max = min(int(r_max), d - 1) if d > 1 else 0
    thr = gap_threshold(eig.eigenvalues, d, gap_constant, gap_scale)
    r = detect_spikes(eig, d, gap_constant, r_max=r_max, threshold=thr) if d > 1 else 0
    lead = eig.eigenvectors[:, :r_max].T * math.sqrt(d)
    lead.setflags(write=False)
    return SpectralEstimate(eig.eigenvalues, r, lead[:r], thr, lead)


def spectral_estimator(data, prep: Preprocessing, gap_constant: float = DEFAULT_GAP_CONSTANT, *,
                       r_max: int | None = None, gap_scale: str = "absolute", threads: int = 1) -> SpectralEstimate:
    """build_T, dense eigendecomposition and the gap rule; rows are the top-r eigenvectors."""
    return estimate_from_matrix(build_T(data, prep, threads=threads), gap_constant,
                                r_max=r_max, gap_scale=gap_scale)


# ---------------------------------------------------------------- metrics

def matrix_mse(w_hat, w_star) -> float:
    """||w_hat w_hat^T - w* w*^T||_F^2 / d^2 through inner products only."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    d = w_star.shape[0]
    a2 = float(w_hat @ w_hat)
    b2 = float(w_star @ w_star)
    ab = float(w_hat @ w_star)
    return (a2 * a2 + b2 * b2 - 2.0 * ab * ab) / (d * d)


@dataclass(frozen=True)
class RecoveryReport:
    overlaps: np.ndarray  # r x m*, |<w_hat_j, w*_k>| / d
    mse_per_index: np.ndarray
    weighted_mse: float
    assignment: dict
    greedy_assignment: dict
    greedy_weighted_mse: float

    def overlap_sq(self, k: int) -> float:
        """Squared overlap of the row assigned to 0-based index k (0 if unassigned)."""
        inv = {v: j for j, v in self.assignment.items()}
        if k not in inv:
            return 0.0
        return float(self.overlaps[inv[k], k] ** 2)


def _mse_from_assignment(ov: np.ndarray, norms2: np.ndarray, d: int, a2: np.ndarray, assign: dict):
    m = ov.shape[1]
    mse = np.ones(m)
    for j, k in assign.items():
        mse[k] = (norms2[j] ** 2 / d**2 + 1.0) - 2.0 * ov[j, k] ** 2 * norms2[j] / d
    mse = np.clip(mse, 0.0, None)
    return mse, math.fsum(a2 * mse)


def recovery_report(est: SpectralEstimate | np.ndarray, spec: TargetSpec, weights: PlantedWeights) -> RecoveryReport:
    W_hat = est.W_hat if isinstance(est, SpectralEstimate) else np.atleast_2d(np.asarray(est, dtype=np.float64))
    W = weights.W_star
    d, m = W.shape[1], W.shape[0]
    if W_hat.size and W_hat.shape[1] != d:
        raise ValidationError("estimator and planted weights have different d")
    r = W_hat.shape[0] if W_hat.size else 0
    if r:
        # |<w_hat, w*>| / d assumes both at squared norm d; general norms enter mse via norms2
        ov = np.abs(W_hat @ W.T) / d
        norms2 = np.einsum("ij,ij->i", W_hat, W_hat)
        ov_unit = ov * d / np.sqrt(np.maximum(norms2, 1e-300) * d)[:, None]
    else:
        ov = np.zeros((0, m))
        norms2 = np.zeros(0)
        ov_unit = ov
    a2 = spec.a**2
    rank = {j: j for j in range(min(r, m))}
    mse, wmse = _mse_from_assignment(ov_unit, norms2, d, a2, rank)
    greedy: dict = {}
    if r:
        work = ov_unit.copy()
        for _ in range(min(r, m)):
            j, k = np.unravel_index(int(np.argmax(work)), work.shape)
            greedy[int(j)] = int(k)
            work[j, :] = -1.0
            work[:, k] = -1.0
    _, gwmse = _mse_from_assignment(ov_unit, norms2, d, a2, greedy)
    return RecoveryReport(ov, mse, wmse, rank, greedy, gwmse)


# ----------------------------------------------------- threshold measurement

def overlap_table(spec: TargetSpec, weights: PlantedWeights | None, prep: Preprocessing,
                  alpha_grid: Sequence[float], seeds: int, *, base_seed: int = 0,
                  gap_constant: float = DEFAULT_GAP_CONSTANT, gap_scale: str = "absolute",
                  require_detection: bool = True, threads: int = 1,
                  stop: Callable[[np.ndarray], bool] | None = None) -> np.ndarray:
    """Squared rank-order overlaps, shape (len(grid), seeds, m*).

    Entry [i, s, k] is (<row k, w*_k>/d)^2 for the estimator at alpha_grid[i]
    and seed s; with ``require_detection`` rows beyond the detected spike
    count contribute 0.  ``stop`` receives the rows filled so far after each
    alpha and may end the scan early (remaining rows stay NaN).
    """
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha_grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("alpha_grid must be strictly increasing")
    if seeds < 1:
        raise ValidationError("seeds must be >= 1")
    d, m = spec.dim_d, spec.m_star
    out = np.full((len(grid), seeds, m), np.nan)
    planted = [weights if weights is not None else sample_planted_weights(spec, base_seed + 1000 * s)
               for s in range(seeds)]
    for i, alpha in enumerate(grid):
        for s, W in enumerate(planted):
            stream = DataStream(spec, W, max(int(round(alpha * d)), 1), base_seed + 1000 * s + i + 1)
            est = spectral_estimator(stream, prep, gap_constant, r_max=m, gap_scale=gap_scale, threads=threads)
            ov = np.einsum("kj,kj->k", est.leading[:m], W.W_star[: est.leading.shape[0]]) / d
            row = np.zeros(m)
            row[: ov.size] = ov**2
            if require_detection:
                row[est.spike_count:] = 0.0
            out[i, s] = row
        if stop is not None and stop(out[: i + 1]):
            break
    return out


def thresholds_from_table(table: np.ndarray, alpha_grid: Sequence[float], overlap_floor: float) -> list[float]:
    """Per index, the first grid alpha whose median squared overlap exceeds the floor (inf if none)."""
    med = np.median(table, axis=1)
    res = []
    for k in range(table.shape[2]):
        hit = np.flatnonzero(med[:, k] > overlap_floor)
        res.append(float(alpha_grid[hit[0]]) if hit.size else math.inf)
    return res


def measure_k_thresholds(spec: TargetSpec, weights: PlantedWeights | None, prep: Preprocessing,
                         ks: Sequence[int], alpha_grid: Sequence[float], overlap_floor: float = 0.1,
                         seeds: int = 3, **kw) -> dict[int, float]:
    """measure_k_threshold for several (1-based) indices sharing one scan."""
    ks = [int(k) for k in ks]
    if any(not 1 <= k <= spec.m_star for k in ks):
        raise ValidationError(f"indices must lie in [1, {spec.m_star}]")
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha_grid is empty")
    if seeds < 3:
        raise ValidationError("threshold measurement needs seeds >= 3")
    if grid[-1] < 10.0 * grid[0]:
        raise ValidationError("alpha_grid must span at least one decade")

    def done(partial):
        med = np.median(partial, axis=1)
        return all(np.any(med[:, k - 1] > overlap_floor) for k in ks)

    table = overlap_table(spec, weights, prep, grid, seeds, stop=done, **kw)
    th = thresholds_from_table(table, grid, overlap_floor)
    return {k: th[k - 1] for k in ks}


def measure_k_threshold(spec: TargetSpec, weights: PlantedWeights | None, prep: Preprocessing, k: int,
                        alpha_grid: Sequence[float], overlap_floor: float = 0.1, seeds: int = 3, **kw) -> float:
    """Smallest grid alpha at which the median squared overlap for index k exceeds the floor.

    Index k (1-based) is read from estimator row k (rank-order assignment);
    unless ``require_detection=False`` the row only counts when the gap rule
    retained it.  Returns ``math.inf`` if the floor is never reached.  When
    ``weights`` is None a fresh planted matrix is drawn per seed.
    """
    return measure_k_thresholds(spec, weights, prep, [k], alpha_grid, overlap_floor, seeds, **kw)[k]


# ------------------------------------------------------------ power iteration

def _spectral_radius(A: np.ndarray, seed: int, iters: int = 60) -> float:
    v = numerics.standard_normal(seed, A.shape[0], 0x7A)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        est = math.sqrt(nrm)
    return est


def gd_power_iteration(data, prep: Preprocessing | None, k_dirs: int, steps: int, step_sign: float = 1.0, *,
                       seed: int = 0, T: np.ndarray | None = None, init: np.ndarray | None = None) -> np.ndarray:
    """Orthogonalized gradient steps W <- qr(W + eta * sign * T W).

    This is simultaneous subspace iteration on I + eta*sign*T with
    eta = 1/rho(T), the same fixed point as small-step gradient descent on
    the first layer.  Returns a k_dirs x d frame with squared row norm d.
    """
    if T is None:
        T = build_T(data, prep)
    d = T.shape[0]
    if not 1 <= k_dirs <= d:
        raise ValidationError(f"k_dirs must lie in [1, {d}]")
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    if step_sign == 0:
        raise ValidationError("step_sign must be nonzero")
    sign = 1.0 if step_sign > 0 else -1.0
    if init is None:
        init = numerics.standard_normal(seed, (k_dirs, d), 0x61)
    Q = numerics.orthonormalize_rows(np.asarray(init, dtype=np.float64)).T  # d x k
    rho = _spectral_radius(T, seed)
    eta = 1.0 / (1.05 * rho) if rho > 0 else 0.0
    for _ in range(steps):
        Q, R = np.linalg.qr(Q + eta * sign * (T @ Q))
        Q *= np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
    return Q.T * math.sqrt(d)


def principal_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle (radians) between the row spaces of A and B."""
    qa, _ = np.linalg.qr(np.asarray(A, dtype=np.float64).T)
    qb, _ = np.linalg.qr(np.asarray(B, dtype=np.float64).T)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.arccos(np.clip(np.min(s), -1.0, 1.0)))


# ----------------------------------------------------------------- export

def spectrum_histogram(eigenvalues, bins: int = 80) -> tuple[np.ndarray, np.ndarray]:
    """Density histogram of the spectrum: (edges of length bins+1, density of length bins)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    density, edges = np.histogram(lam, bins=bins, density=True)
    return edges, density


def write_spectrum(path, eigenvalues, top_k: int, bins: int = 80, meta: dict | None = None) -> tuple[Path, Path]:
    """CSV (bin_left, bin_right, density) plus a JSON sidecar with the top_k eigenvalues."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    edges, density = spectrum_histogram(eigenvalues, bins)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "density"])
        for lo, hi, p in zip(edges[:-1], edges[1:], density):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(p))])
    side = path.with_suffix(".top.json")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    payload = {"top_eigenvalues": [float(x) for x in lam[:top_k]]}
    if meta:
        payload.update(meta)
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path, side


def read_spectrum(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(Path(path).open()))
    return (np.array([float(r["bin_left"]) for r in rows]), np.array([float(r["bin_right"]) for r in rows]),
            np.array([float(r["density"]) for r in rows]))
