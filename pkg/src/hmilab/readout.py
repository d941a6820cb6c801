"""Two-stage network training: spectral first layer, random-feature ridge readout.

Stage one estimates the target subspace from the even-indexed half of the
data.  The first layer mixes those directions with a Gaussian matrix Z
(p x r, variance 1/r), so W = Z W_hat, and adds frozen N(0, 1) biases.
Stage two solves the ridge normal equations for the readout on the
odd-indexed half; the feature matrix is only ever seen in row blocks.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import numerics
from .datagen import DEFAULT_BLOCK_SIZE, Dataset, DataStream, split_dataset
from .errors import ValidationError
from .model import PlantedWeights, TargetSpec, index_values, target_from_indices
from .spectral import (DEFAULT_GAP_CONSTANT, Preprocessing, SpectralEstimate, rational_preprocessing,
                       recovery_report, spectral_estimator)
from .theory.rates import predict_mse_decomposition

_Z_KEY = 0x2A
_BIAS_KEY = 0xB5
_FALLBACK_KEY = 0xFB
_TEST_KEY = 0x7E57
_HNET_HEADER = struct.Struct("<4sIQQQ")
HNET_MAGIC = b"HNET"
HNET_VERSION = 1
CONDITION_LIMIT = 1e14


class IllConditionedWarning(RuntimeWarning):
    """Ridge Gram matrix is close to singular; a small diagonal jitter was added."""


# ------------------------------------------------------------- activations

@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    bounded: bool = True

    def __call__(self, z):
        return self.fn(z)


def _sigmoid_centered(z):
    return 0.5 * np.tanh(0.5 * z)  # logistic(z) - 1/2


ACTIVATIONS = {
    "sigmoid_centered": Activation("sigmoid_centered", _sigmoid_centered),
    "tanh": Activation("tanh", np.tanh),
    "constant": Activation("constant", np.ones_like),
    "identity": Activation("identity", lambda z: np.asarray(z, dtype=np.float64), bounded=False),
}
DEFAULT_ACTIVATION = "sigmoid_centered"


def get_activation(act: str | Activation) -> Activation:
    if isinstance(act, Activation):
        return act
    try:
        return ACTIVATIONS[act]
    except KeyError:
        raise ValidationError(f"unknown activation {act!r}; choose from {sorted(ACTIVATIONS)}") from None


def check_activation(act: Activation, bound: float = 10.0, *, allow_unbounded: bool = False) -> float:
    """sup |sigma| on a dense grid over [-50, 50]; raises if above ``bound`` or non-finite."""
    grid = np.linspace(-50.0, 50.0, 20001)
    vals = np.asarray(act(grid), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValidationError(f"activation {act.name!r} is not finite on [-50, 50]")
    sup = float(np.max(np.abs(vals)))
    if act.bounded and sup > bound:
        raise ValidationError(f"activation {act.name!r} exceeds the bound {bound} (sup {sup:.3g})")
    if not act.bounded and not allow_unbounded:
        raise ValidationError(f"activation {act.name!r} is unbounded; pass allow_unbounded for diagnostics")
    return sup


def default_width(n: int) -> int:
    """p = ceil(2 sqrt(n) log n)."""
    return max(1, int(math.ceil(2.0 * math.sqrt(n) * math.log(n)))) if n > 1 else 1


def default_ridge(n: int) -> float:
    """lambda = 1/sqrt(n)."""
    return 1.0 / math.sqrt(n)


# ----------------------------------------------------------------- network

@dataclass(frozen=True)
class TrainedNetwork:
    W: np.ndarray  # p x d
    b: np.ndarray
    a: np.ndarray
    activation: Activation
    ridge_lambda: float
    Z: np.ndarray | None = field(default=None, repr=False)
    W_hat: np.ndarray | None = field(default=None, repr=False)
    gram: np.ndarray | None = field(default=None, repr=False)
    rhs: np.ndarray | None = field(default=None, repr=False)
    n_train: int = 0
    fallback: bool = False
    jitter: float = 0.0

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def r(self) -> int:
        return 0 if self.W_hat is None else self.W_hat.shape[0]

    def features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.activation(X @ self.W.T + self.b)

    def predict(self, X, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], block_size):
            out[s:s + block_size] = self.features(X[s:s + block_size]) @ self.a
        return out

    def objective(self, a: np.ndarray, data: Dataset) -> float:
        """Regularized training loss ||y - Psi a||^2 + n lambda ||a||^2."""
        resid = data.y - self.features(data.X) @ a
        return float(resid @ resid + data.n * self.ridge_lambda * (a @ a))


def _fallback_directions(p: int, d: int, seed: int) -> np.ndarray:
    return numerics.standard_normal(seed, (p, d), _FALLBACK_KEY) / math.sqrt(d)


def spectral_init(est: SpectralEstimate | np.ndarray, p: int, seed: int, *,
                  deterministic: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    """First-layer weights W = Z W_hat with Z_ij ~ N(0, 1/r).

    ``deterministic`` uses Z = identity padded with zero rows (diagnostic).
    With no detected spikes the layer falls back to p random directions with
    N(0, I/d) entries and Z is returned as None.
    """
    W_hat = est.W_hat if isinstance(est, SpectralEstimate) else np.atleast_2d(np.asarray(est, dtype=np.float64))
    if p < 1:
        raise ValidationError("p must be >= 1")
    r = W_hat.shape[0] if W_hat.size else 0
    if r == 0:
        d = est.d if isinstance(est, SpectralEstimate) else W_hat.shape[1]
        return _fallback_directions(p, d, seed), None
    if deterministic:
        Z = np.zeros((p, r))
        Z[np.arange(min(p, r)), np.arange(min(p, r))] = 1.0
    else:
        Z = numerics.standard_normal(seed, (p, r), _Z_KEY) / math.sqrt(r)
    return Z @ W_hat, Z


def _solve_ridge(gram: np.ndarray, rhs: np.ndarray, n: int, lam: float) -> tuple[np.ndarray, float]:
    p = gram.shape[0]
    shift = n * lam
    trace = float(np.trace(gram))
    jitter = 0.0
    # lambda_max / lambda_min <= (trace + n lambda) / (n lambda)
    if 1.0 + trace / shift > CONDITION_LIMIT:
        jitter = 1e-10 * trace / p
        warnings.warn(f"ridge Gram condition estimate exceeds {CONDITION_LIMIT:.0e}; adding jitter {jitter:.3e}",
                      IllConditionedWarning, stacklevel=3)
    A = gram + (shift + jitter) * np.eye(p)
    c, low = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False), jitter


def train_readout(W: np.ndarray, data2: Dataset | DataStream, activation: str | Activation = DEFAULT_ACTIVATION,
                  ridge_lambda: float | None = None, seed: int = 0, *, b: np.ndarray | None = None,
                  Z: np.ndarray | None = None, W_hat: np.ndarray | None = None, fallback: bool = False,
                  activation_bound: float = 10.0, allow_unbounded: bool = False) -> TrainedNetwork:
    """Ridge readout a = (Psi^T Psi + n lambda I)^-1 Psi^T y on features Psi = sigma(X W^T + b).

    Only the p x p Gram and the p-vector Psi^T y are accumulated; biases are
    drawn from N(0, 1) with ``seed`` unless given.
    """
    act = get_activation(activation)
    check_activation(act, activation_bound, allow_unbounded=allow_unbounded)
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    p = W.shape[0]
    n = data2.size if isinstance(data2, DataStream) else data2.n
    lam = default_ridge(n) if ridge_lambda is None else float(ridge_lambda)
    if not lam > 0:
        raise ValidationError("ridge_lambda must be positive")
    if b is None:
        b = numerics.standard_normal(seed, p, _BIAS_KEY)
    gram = np.zeros((p, p))
    rhs = np.zeros(p)
    for X, y in data2.blocks():
        Psi = act(X @ W.T + b)
        gram += Psi.T @ Psi
        rhs += Psi.T @ y
    gram = 0.5 * (gram + gram.T)
    a, jitter = _solve_ridge(gram, rhs, n, lam)
    return TrainedNetwork(W, np.asarray(b, dtype=np.float64), a, act, lam, Z, W_hat, gram, rhs, n, fallback, jitter)


def excess_risk(net: TrainedNetwork, spec: TargetSpec, weights: PlantedWeights, n_test: int = 100_000,
                seed: int = 0, block_size: int = DEFAULT_BLOCK_SIZE) -> tuple[float, float]:
    """Monte Carlo E[(f*(x) - f(x))^2] over fresh covariates, with its standard error."""
    if n_test < 1000:
        raise ValidationError("n_test must be >= 1000")
    d = spec.dim_d
    total = 0.0
    total_sq = 0.0
    for start in range(0, n_test, block_size):
        rows = min(block_size, n_test - start)
        X = numerics.standard_normal(seed, (rows, d), _TEST_KEY, start // block_size) / math.sqrt(d)
        err = target_from_indices(spec, index_values(weights, X)) - net.predict(X)
        e2 = err * err
        total += math.fsum(e2)
        total_sq += math.fsum(e2 * e2)
    mean = total / n_test
    var = max(total_sq / n_test - mean * mean, 0.0)
    return mean, math.sqrt(var / n_test)


def effective_noise(spec: TargetSpec, est: SpectralEstimate, data: Dataset) -> float:
    """Var(y - sum_{k<=r} a*_k g_k(<w_hat_k, x>)): label variance left after the recovered directions."""
    resid = np.array(data.y, dtype=np.float64, copy=True)
    if est.spike_count:
        S = data.X @ est.W_hat.T
        for k in range(min(est.spike_count, spec.m_star)):
            resid -= spec.a_star[k] * spec.links[k](S[:, k])
    return float(np.var(resid))


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class RiskReport:
    seed: int
    n: int
    alpha: float
    alpha_spectral: float
    p: int
    ridge_lambda: float
    spike_count: int
    fallback: bool
    risk: float
    risk_stderr: float
    weighted_mse: float
    target_variance: float
    delta_eff: float
    theory_learned: float
    theory_underfit: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class MultiSeedReport:
    reports: tuple[RiskReport, ...]

    @property
    def median_risk(self) -> float:
        return float(np.median([r.risk for r in self.reports]))

    @property
    def median_weighted_mse(self) -> float:
        return float(np.median([r.weighted_mse for r in self.reports]))


def readout_stage(est: SpectralEstimate, data: Dataset, p: int | None = None, ridge_lambda: float | None = None,
                  activation: str | Activation = DEFAULT_ACTIVATION, seed: int = 0) -> TrainedNetwork:
    """Step 3 on a materialized dataset: features from W = Z W_hat, readout fitted on the odd rows only."""
    _, d2 = split_dataset(data)
    p = default_width(d2.n) if p is None else p
    W, Z = spectral_init(est, p, seed)
    return train_readout(W, d2, activation, ridge_lambda, seed, Z=Z,
                         W_hat=est.W_hat if Z is not None else None, fallback=Z is None)


@dataclass(frozen=True)
class Algorithm1Run:
    network: TrainedNetwork
    report: RiskReport
    estimate: SpectralEstimate
    recovery: object


def algorithm1_once(spec: TargetSpec, weights: PlantedWeights, n: int, seed: int, *, p: int | None = None,
                    ridge_lambda: float | None = None, prep: Preprocessing | None = None,
                    activation: str | Activation = DEFAULT_ACTIVATION, gap_constant: float = DEFAULT_GAP_CONSTANT,
                    gap_scale: str = "absolute", r_max: int | None = None, n_test: int = 100_000,
                    threads: int = 1) -> Algorithm1Run:
    """One seed of the pipeline, keeping the spectral estimate and its recovery report."""
    if n < 2 or n % 2:
        raise ValidationError(f"n must be even and >= 2, got {n}")
    prep = prep or rational_preprocessing()
    d = spec.dim_d
    n2 = n // 2
    p = default_width(n2) if p is None else int(p)
    lam = default_ridge(n2) if ridge_lambda is None else float(ridge_lambda)
    r_max = spec.m_star if r_max is None else r_max
    stream = DataStream(spec, weights, n, int(seed))
    est = spectral_estimator(stream.half(0), prep, gap_constant, r_max=r_max, gap_scale=gap_scale, threads=threads)
    d2 = stream.half(1).materialize()
    W, Z = spectral_init(est, p, int(seed))
    net = train_readout(W, d2, activation, lam, int(seed), Z=Z, W_hat=est.W_hat if Z is not None else None,
                        fallback=Z is None)
    risk, se = excess_risk(net, spec, weights, n_test, int(seed))
    rec = recovery_report(est, spec, weights)
    dec = predict_mse_decomposition(spec, n2 / d)
    report = RiskReport(int(seed), n, n / d, n2 / d, p, lam, est.spike_count, Z is None, risk, se,
                        rec.weighted_mse, spec.target_variance(), effective_noise(spec, est, d2),
                        dec.learned_part, dec.underfit_part)
    return Algorithm1Run(net, report, est, rec)


def run_algorithm1(spec: TargetSpec, weights: PlantedWeights, n: int, p: int | None = None,
                   ridge_lambda: float | None = None, prep: Preprocessing | None = None,
                   activation: str | Activation = DEFAULT_ACTIVATION, seeds: int | Sequence[int] = 0, **kw):
    """Spectral stage on the even rows, ridge readout on the odd rows, excess risk on fresh data.

    Defaults p = ceil(2 sqrt(n2) log n2) and lambda = 1/sqrt(n2) with n2 = n/2
    the readout sample size.  Returns ``(network, report)``; with a sequence of
    seeds the network is the first seed's and the report a :class:`MultiSeedReport`.
    The theory columns of the report are evaluated at the spectral stage's alpha, n/(2d).
    """
    single = isinstance(seeds, (int, np.integer))
    seed_list = [int(seeds)] if single else [int(s) for s in seeds]
    if not seed_list:
        raise ValidationError("at least one seed is required")
    runs = [algorithm1_once(spec, weights, n, s, p=p, ridge_lambda=ridge_lambda, prep=prep,
                            activation=activation, **kw) for s in seed_list]
    if single:
        return runs[0].network, runs[0].report
    return runs[0].network, MultiSeedReport(tuple(r.report for r in runs))


# ---------------------------------------------------------------- binary IO

def write_network(path, net: TrainedNetwork) -> None:
    """Little-endian {magic, version u32, p, d, r u64; W, b, a f64; tag u32 length + utf8; lambda f64}."""
    tag = net.activation.name.encode()
    with Path(path).open("wb") as fh:
        fh.write(_HNET_HEADER.pack(HNET_MAGIC, HNET_VERSION, net.p, net.d, net.r))
        for arr in (net.W, net.b, net.a):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(tag)) + tag)
        fh.write(struct.pack("<d", net.ridge_lambda))


def read_network(path) -> TrainedNetwork:
    raw = Path(path).read_bytes()
    if len(raw) < _HNET_HEADER.size:
        raise ValidationError(f"{path}: truncated HNET header")
    magic, version, p, d, r = _HNET_HEADER.unpack_from(raw)
    if magic != HNET_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != HNET_VERSION:
        raise ValidationError(f"{path}: unsupported HNET version {version}")
    off = _HNET_HEADER.size
    need = 8 * (p * d + 2 * p)
    if len(raw) < off + need + 4:
        raise ValidationError(f"{path}: truncated payload")
    body = np.frombuffer(raw, dtype="<f8", count=p * d + 2 * p, offset=off).astype(np.float64)
    off += need
    (tlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    tag = raw[off:off + tlen].decode()
    off += tlen
    if len(raw) != off + 8:
        raise ValidationError(f"{path}: unexpected trailing bytes")
    (lam,) = struct.unpack_from("<d", raw, off)
    W = body[: p * d].reshape(p, d)
    return TrainedNetwork(W, body[p * d:p * d + p].copy(), body[p * d + p:].copy(), get_activation(tag), lam)
