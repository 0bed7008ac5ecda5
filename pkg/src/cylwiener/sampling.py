"""Seeded Brownian drivers and the Wiener paths assembled from them.

Randomness comes from counter-based substreams: replicas are grouped in
blocks of ``BLOCK`` and every block owns a Philox stream keyed by
``(seed, stream id, block index)``. A replica's numbers therefore depend only
on the seed and its index, never on how replicas are split across workers.
Driver channels are always standard Brownian motions; covariance scaling is
applied when paths are assembled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covariance import EmbeddingTriple, SpectralCovariance
from .hilbert import DimensionMismatch, LinOp, TruncatedSpace

BLOCK = 256
DRIVER_STREAM = 1
FIELD_STREAM = 2
_SEED_LIMIT = 2**64


class NonGridTime(ValueError):
    """A time that is not a node of the time grid."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=np.float64).ravel()
        if t.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise ValueError("time grid nodes must be finite and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T: float, steps: int) -> "TimeGrid":
        if steps < 1 or not T > 0:
            raise ValueError("uniform grid needs T > 0 and at least one step")
        return cls(np.linspace(0.0, T, steps + 1))

    @property
    def steps(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        k = int(np.searchsorted(self.nodes, t - atol))
        if k > self.steps or abs(self.nodes[k] - t) > atol * max(1.0, abs(t)):
            raise NonGridTime(f"t = {t} is not a grid node")
        return k


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError("seed must be a non-negative 64-bit integer")
    return seed


def _block_normals(seed: int, stream: int, block: int, shape: tuple) -> np.ndarray:
    key = np.array([seed, (stream << 48) | block], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((BLOCK,) + tuple(shape))


def standard_normals(seed, stream: int, first: int, count: int, shape: tuple) -> np.ndarray:
    """Standard normals for replicas ``first .. first + count - 1``."""
    seed = check_seed(seed)
    if first < 0 or count < 0:
        raise ValueError("replica range must be non-negative")
    out = np.empty((count,) + tuple(shape))
    pos = 0
    r = first
    while pos < count:
        block, offset = divmod(r, BLOCK)
        take = min(BLOCK - offset, count - pos)
        out[pos : pos + take] = _block_normals(seed, stream, block, shape)[offset : offset + take]
        pos += take
        r += take
    return out


@dataclass(frozen=True, eq=False)
class BrownianDriver:
    """Independent standard Brownian channels on a grid.

    ``increments`` has shape (m, K) for a single realisation or (R, m, K)
    for a batch of replicas.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: Optional[int] = None
    first_replica: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim not in (2, 3) or inc.shape[-1] != self.grid.steps:
            raise DimensionMismatch("increments must be (m, K) or (R, m, K) with K grid steps")
        object.__setattr__(self, "increments", inc)

    @property
    def channels(self) -> int:
        return self.increments.shape[-2]

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 3

    @property
    def replicas(self) -> int:
        return self.increments.shape[0] if self.batched else 1

    def values(self) -> np.ndarray:
        """beta_j(t_k), shape (..., m, K + 1), starting from 0."""
        b = np.zeros(self.increments.shape[:-1] + (self.grid.steps + 1,))
        np.cumsum(self.increments, axis=-1, out=b[..., 1:])
        return b

    def batch(self) -> np.ndarray:
        """Increments with a leading replica axis."""
        return self.increments if self.batched else self.increments[None]


def sample_driver(
    grid: TimeGrid, m: int, seed, replicas: Optional[int] = None, first_replica: int = 0
) -> BrownianDriver:
    """m standard Brownian channels; replicas=None gives a single realisation."""
    if m < 1:
        raise ValueError("a driver needs at least one channel")
    count = 1 if replicas is None else int(replicas)
    if count < 1:
        raise ValueError("replicas must be positive")
    z = standard_normals(seed, DRIVER_STREAM, first_replica, count, (m, grid.steps))
    inc = z * np.sqrt(grid.dt)
    if replicas is None:
        inc = inc[0]
    return BrownianDriver(grid, inc, check_seed(seed), first_replica)


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Coefficients of a path at the grid nodes, shape (..., K + 1, dim)."""

    grid: TimeGrid
    space: TruncatedSpace
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.values[..., self.grid.index_of(t), :]

    def write_csv(self, fh, replica: int = 0) -> None:
        """One row per node: t, x1..x_dim."""
        vals = self.values if self.values.ndim == 2 else self.values[replica]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.space.dim)])
        for t, row in zip(self.grid.nodes, vals):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def q_wiener_path(driver: BrownianDriver, Q: SpectralCovariance) -> WienerPath:
    """W(t_k) = sum_i sqrt(zeta_i) beta_i(t_k) d_i."""
    if driver.channels < Q.dim:
        raise ValueError(f"driver has {driver.channels} channels, Q needs {Q.dim}")
    b = driver.values()[..., : Q.dim, :]
    vals = np.swapaxes(b, -1, -2) * np.sqrt(Q.eigenvalues)
    return WienerPath(driver.grid, Q.space, vals)


def cylindrical_path(driver: BrownianDriver, triple: EmbeddingTriple, m: int) -> WienerPath:
    """Partial sum W_c^(m)(t_k) = sum_{j<=m} g_j beta_j(t_k) in U1 coordinates."""
    if m < 0 or m > driver.channels or m > triple.dim:
        raise ValueError(f"truncation m = {m} exceeds channels or dimension")
    shape = driver.increments.shape[:-2] + (driver.grid.steps + 1, triple.dim)
    vals = np.zeros(shape)
    if m:
        b = driver.values()[..., :m, :]
        vals[..., :m] = np.swapaxes(b, -1, -2) * np.sqrt(triple.Q.eigenvalues[:m])
    return WienerPath(driver.grid, triple.U1, vals)


def pairing(a, path: WienerPath) -> np.ndarray:
    """t -> (a, W(t))_U with the Euclidean inner product of U."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (path.space.dim,):
        raise DimensionMismatch(f"a must have length {path.space.dim}")
    return path.values @ a


def _replica_matrix(replicas) -> np.ndarray:
    x = np.asarray(replicas, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("replicas must be an (N, dim) array")
    if x.shape[0] < 2:
        raise ValueError("at least two replicas are needed for a covariance")
    return x


def empirical_covariance(replicas, space: Optional[TruncatedSpace] = None) -> LinOp:
    """Sample covariance operator with (C a, b)_space = mean-centred E(a,X)(b,X).

    In coordinates this is S W, where S is the usual sample covariance of the
    coefficient vectors and W the weight matrix of ``space``.
    """
    x = _replica_matrix(replicas)
    space = space or TruncatedSpace(x.shape[1], "U1")
    if space.dim != x.shape[1]:
        raise DimensionMismatch("replica length does not match the space")
    S = np.cov(x, rowvar=False, ddof=1).reshape(space.dim, space.dim)
    return LinOp(S * space.w[None, :], space, space)


def empirical_covariance_se(replicas, space: Optional[TruncatedSpace] = None) -> np.ndarray:
    """CLT standard error of each entry of ``empirical_covariance``."""
    x = _replica_matrix(replicas)
    space = space or TruncatedSpace(x.shape[1], "U1")
    xc = x - x.mean(axis=0)
    n = x.shape[0]
    se = np.empty((space.dim, space.dim))
    for i in range(space.dim):
        se[i] = (xc[:, i, None] * xc * space.w).std(axis=0, ddof=1)
    return se / np.sqrt(n)
