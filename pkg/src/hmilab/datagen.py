"""Planted weights, covariates and labels, plus the Algorithm-1 data split.

Covariates follow x ~ N(0, I_d / d) and planted rows have squared norm d, so
every index z_k = <w*_k, x> is standard normal.  Data are produced in blocks
of ``block_size`` rows; block ``i`` is drawn from the counter-based stream
``(seed, i)`` which makes any block reproducible in isolation.  A
:class:`DataStream` regenerates blocks on demand and is how large-n runs feed
the spectral matrix without ever holding X in memory.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numerics
from .errors import DegenerateInputError, ResourceError, ValidationError
from .model import PlantedWeights, TargetSpec, index_values, target_from_indices

DEFAULT_BLOCK_SIZE = 4096
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

_WEIGHTS_KEY = 0x57
_DATA_KEY = 0xDA
_HMIX_HEADER = struct.Struct("<4sIQQQ")
HMIX_MAGIC = b"HMIX"
HMIX_VERSION = 1


def sample_planted_weights(spec: TargetSpec, seed: int) -> PlantedWeights:
    """Orthogonal planted rows with squared norm d from a seeded Gaussian matrix."""
    m, d = spec.m_star, spec.dim_d
    if m > d:
        raise ValidationError(f"m_star={m} exceeds d={d}")
    for attempt in range(2):
        G = numerics.standard_normal(seed, (m, d), _WEIGHTS_KEY, attempt)
        try:
            return PlantedWeights(numerics.orthonormalize_rows(G, scale=float(d)))
        except DegenerateInputError:
            if attempt:
                raise
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    seed: int
    spec_fingerprint: str = ""
    rows: np.ndarray | None = field(default=None, repr=False)  # original row indices after a split

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValidationError("X must be n x d and y length n")
        if self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ValidationError("dataset must have n >= 1 and d >= 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def alpha(self) -> float:
        return self.n / self.d

    def blocks(self, block_size: int = DEFAULT_BLOCK_SIZE) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for start in range(0, self.n, block_size):
            yield self.X[start:start + block_size], self.y[start:start + block_size]


@dataclass(frozen=True)
class DataStream:
    """Lazily generated dataset; iterating twice yields identical blocks.

    ``parity`` restricts the stream to even (0) or odd (1) global row indices,
    which is how the Algorithm-1 halves are formed without materializing X.
    """

    spec: TargetSpec
    weights: PlantedWeights
    n: int
    seed: int
    block_size: int = DEFAULT_BLOCK_SIZE
    null_labels: bool = False
    parity: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.block_size < 2 or self.block_size % 2:
            raise ValidationError("block_size must be an even integer >= 2")
        if self.parity not in (None, 0, 1):
            raise ValidationError("parity must be None, 0 or 1")

    @property
    def d(self) -> int:
        return self.spec.dim_d

    @property
    def size(self) -> int:
        if self.parity is None:
            return self.n
        return (self.n + 1 - self.parity) // 2

    @property
    def alpha(self) -> float:
        return self.size / self.d

    @property
    def n_blocks(self) -> int:
        return -(-self.n // self.block_size)

    def block(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Full (parity-unrestricted) block ``index``."""
        start = index * self.block_size
        rows = min(self.block_size, self.n - start)
        if rows <= 0:
            raise IndexError(index)
        rng = numerics.rng_stream(self.seed, _DATA_KEY, index)
        X = rng.standard_normal((rows, self.d))
        X *= 1.0 / math.sqrt(self.d)
        xi = rng.standard_normal(rows)
        noise = math.sqrt(self.spec.noise_delta) * xi
        if self.null_labels:
            return X, noise
        y = target_from_indices(self.spec, index_values(self.weights, X)) + noise
        return X, y

    def blocks(self, block_size: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for i in range(self.n_blocks):
            X, y = self.block(i)
            if self.parity is not None:
                X, y = X[self.parity::2], y[self.parity::2]
            yield X, y

    def half(self, parity: int) -> "DataStream":
        return DataStream(self.spec, self.weights, self.n, self.seed, self.block_size,
                          self.null_labels, parity)

    def materialize(self, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Dataset:
        need = self.size * self.d * 8
        if need > memory_budget:
            raise ResourceError(f"materializing {self.size} x {self.d} needs {need / 2**20:.0f} MiB, "
                                f"over the {memory_budget / 2**20:.0f} MiB budget; use DataStream blocks instead")
        Xs, ys = zip(*self.blocks())
        rows = np.arange(self.n)
        if self.parity is not None:
            rows = rows[self.parity::2]
        return Dataset(np.concatenate(Xs), np.concatenate(ys), self.seed, self.spec.fingerprint(), rows)


def sample_dataset(spec: TargetSpec, weights: PlantedWeights, n: int, seed: int, *,
                   block_size: int = DEFAULT_BLOCK_SIZE, null_labels: bool = False,
                   memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Dataset:
    """Materialized dataset: y_i = f*(x_i) + sqrt(Delta) xi_i."""
    stream = DataStream(spec, weights, n, seed, block_size, null_labels)
    return stream.materialize(memory_budget)


def split_dataset(data: Dataset, *, shuffle_seed: int | None = None) -> tuple[Dataset, Dataset]:
    """Two disjoint halves: even rows -> D1, odd rows -> D2.

    With ``shuffle_seed`` the rows are first permuted by a seeded shuffle.
    """
    if data.n % 2:
        raise ValidationError(f"split needs an even number of rows, got n={data.n}")
    rows = data.rows if data.rows is not None else np.arange(data.n)
    order = np.arange(data.n)
    if shuffle_seed is not None:
        order = numerics.rng_stream(shuffle_seed, 0x5F).permutation(data.n)
    halves = []
    for parity in (0, 1):
        idx = order[parity::2]
        halves.append(Dataset(data.X[idx], data.y[idx], data.seed, data.spec_fingerprint, rows[idx]))
    return halves[0], halves[1]


def write_dataset(path, data: Dataset) -> None:
    """Binary dump: little-endian header {magic, version u32, n u64, d u64, seed u64}, X, y."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HMIX_HEADER.pack(HMIX_MAGIC, HMIX_VERSION, data.n, data.d, int(data.seed) & (2**64 - 1)))
        fh.write(np.ascontiguousarray(data.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.y, dtype="<f8").tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HMIX_HEADER.size:
        raise ValidationError(f"{path}: truncated HMIX header")
    magic, version, n, d, seed = _HMIX_HEADER.unpack_from(raw)
    if magic != HMIX_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != HMIX_VERSION:
        raise ValidationError(f"{path}: unsupported HMIX version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HMIX_HEADER.size)
    if body.size != n * d + n:
        raise ValidationError(f"{path}: payload has {body.size} values, expected {n * d + n}")
    X = body[: n * d].reshape(n, d).astype(np.float64)
    y = body[n * d:].astype(np.float64)
    return Dataset(X, y, int(seed))
