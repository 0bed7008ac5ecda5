"""White-noise martingale measure on a box in R^d and the Walsh integral.

Space is resolved into grid cells and time into grid steps. The field holds
independent N(0, mes(cell) * dt) increments, and M_t(A) sums them over the
cells of A and the steps up to t. Admissible sets are unions of cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Callable, Iterable, Optional, Union

import numpy as np

from ._backend import masked_block_sum
from .covariance import CYLINDRICAL, SpectralCovariance, build_embedding
from .integral import StepIntegrand, integrate_cylindrical
from .hilbert import TruncatedSpace
from .sampling import FIELD_STREAM, BrownianDriver, TimeGrid, check_seed, standard_normals


class UnknownCell(ValueError):
    pass


class NotProductForm(ValueError):
    """The integrand is not f(t) I_A(x) with deterministic steps f."""


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Axis-aligned box split into a product grid of cells (C order)."""

    edges: tuple

    def __post_init__(self):
        edges = []
        for e in self.edges:
            e = np.array(e, dtype=np.float64)
            if e.ndim != 1 or e.size < 2 or not np.all(np.isfinite(e)) or np.any(np.diff(e) <= 0):
                raise ValueError("cell edges must be finite and strictly increasing per axis")
            e.setflags(write=False)
            edges.append(e)
        if not 1 <= len(edges) <= 3:
            raise ValueError("dimension d must be 1, 2 or 3")
        if any(e.size - 1 > 32 for e in edges):
            raise ValueError("at most 32 cells per axis")
        object.__setattr__(self, "edges", tuple(edges))

    @classmethod
    def uniform(cls, d: int = 2, cells_per_axis: int = 8, box=None) -> "SpatialGrid":
        box = box if box is not None else [[0.0, 1.0]] * d
        if len(box) != d:
            raise ValueError("box must list one [lo, hi] pair per axis")
        return cls(tuple(np.linspace(lo, hi, cells_per_axis + 1) for lo, hi in box))

    @property
    def d(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        v = widths[0]
        for w in widths[1:]:
            v = np.multiply.outer(v, w)
        return np.asarray(v, dtype=np.float64).ravel()

    def cell_index(self, *multi) -> int:
        return int(np.ravel_multi_index(multi, self.shape))

    def cells(self, A: Iterable[int]) -> np.ndarray:
        """Validated, sorted, de-duplicated cell indices."""
        a = np.unique(np.asarray(list(A), dtype=np.int64))
        if a.size and (a[0] < 0 or a[-1] >= self.n_cells):
            raise UnknownCell(f"cell indices must lie in 0..{self.n_cells - 1}")
        return a

    def measure(self, A: Iterable[int]) -> float:
        return float(np.sum(self.volumes[self.cells(A)]))

    def all_cells(self) -> np.ndarray:
        return np.arange(self.n_cells, dtype=np.int64)


def grid_from_descriptor(d: dict) -> tuple[SpatialGrid, TimeGrid]:
    """{d, box, cellsPerAxis, timeSteps, T} -> (spatial grid, time grid)."""
    try:
        dim = int(d.get("d", 2))
        sg = SpatialGrid.uniform(dim, int(d.get("cellsPerAxis", 8)), d.get("box"))
        tg = TimeGrid.uniform(float(d.get("T", 1.0)), int(d.get("timeSteps", 16)))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad grid descriptor: {exc}") from None
    return sg, tg


@dataclass(frozen=True, eq=False)
class WhiteNoiseField:
    """Increments of shape (C, K) or (R, C, K)."""

    space: SpatialGrid
    time: TimeGrid
    increments: np.ndarray
    seed: Optional[int] = None

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 3

    def batch(self) -> np.ndarray:
        return self.increments if self.batched else self.increments[None]

    def _out(self, v: np.ndarray):
        return v if self.batched else float(v[0])


def sample_field(
    space: SpatialGrid, time: TimeGrid, seed, replicas: Optional[int] = None, first_replica: int = 0
) -> WhiteNoiseField:
    count = 1 if replicas is None else int(replicas)
    if count < 1:
        raise ValueError("replicas must be positive")
    z = standard_normals(seed, FIELD_STREAM, first_replica, count, (space.n_cells, time.steps))
    inc = z * np.sqrt(np.multiply.outer(space.volumes, time.dt))
    return WhiteNoiseField(space, time, inc if replicas is not None else inc[0], check_seed(seed))


def _cell_sum(field: WhiteNoiseField, cells: np.ndarray, k_lo: int, k_hi: int) -> np.ndarray:
    return masked_block_sum(np.ascontiguousarray(field.batch()), cells, k_lo, k_hi)


def martingale_measure(field: WhiteNoiseField, t: float, A: Iterable[int]):
    """M_t(A): the field summed over the cells of A and steps up to t."""
    cells = field.space.cells(A)
    return field._out(_cell_sum(field, cells, 0, field.time.index_of(t)))


class FieldHistory:
    """Field increments strictly before a time node; what a predictable X may use."""

    def __init__(self, field: WhiteNoiseField, limit: int):
        self.field = field
        self.limit = limit

    @property
    def increments(self) -> np.ndarray:
        v = self.field.batch()[..., : self.limit]
        v.setflags(write=False)
        return v

    def measure(self, A: Iterable[int]) -> np.ndarray:
        """M at the history's time, shape (R,)."""
        return _cell_sum(self.field, self.field.space.cells(A), 0, self.limit)


Coefficient = Union[float, Callable[[FieldHistory], np.ndarray]]


@dataclass(frozen=True, eq=False)
class ElementaryFn:
    """X * 1_(a, b](s) * 1_A(x) with X known at time a."""

    a: float
    b: float
    cells: frozenset
    X: Coefficient = 1.0

    def __post_init__(self):
        if not 0 <= self.a <= self.b:
            raise ValueError("need 0 <= a <= b")
        object.__setattr__(self, "cells", frozenset(int(c) for c in self.cells))
        if not callable(self.X):
            x = float(self.X)
            if not np.isfinite(x):
                raise ValueError("X must be finite")
            object.__setattr__(self, "X", x)

    @property
    def deterministic(self) -> bool:
        return not callable(self.X)

    def coefficient(self, field: WhiteNoiseField):
        if self.deterministic:
            return self.X
        ka = field.time.index_of(min(self.a, field.time.T))
        x = np.asarray(self.X(FieldHistory(field, ka)), dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("X must be finite")
        return x

    def to_dict(self) -> dict:
        if not self.deterministic:
            raise ValueError("random coefficients do not serialise")
        return {"a": self.a, "b": self.b, "cells": sorted(self.cells), "X": self.X}


@dataclass(frozen=True, eq=False)
class SimpleFn:
    terms: tuple = dc_field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def deterministic(self) -> bool:
        return all(t.deterministic for t in self.terms)

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.terms])

    @classmethod
    def from_json(cls, text: str) -> "SimpleFn":
        return cls.from_list(json.loads(text))

    @classmethod
    def from_list(cls, items) -> "SimpleFn":
        try:
            return cls(tuple(ElementaryFn(float(i["a"]), float(i["b"]), i["cells"], float(i.get("X", 1.0))) for i in items))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed simple function: {exc}") from None


def elementary_integral(f: ElementaryFn, field: WhiteNoiseField, t: float, B: Iterable[int]):
    """f.M_t(B) = X (M_{t^b}(A n B) - M_{t^a}(A n B))."""
    grid = field.space
    inter = np.intersect1d(grid.cells(f.cells), grid.cells(B))
    k_lo = field.time.index_of(min(t, f.a))
    k_hi = field.time.index_of(min(t, f.b))
    incr = _cell_sum(field, inter, k_lo, k_hi)
    return field._out(f.coefficient(field) * incr)


def simple_integral(f: SimpleFn, field: WhiteNoiseField, t: float, B: Iterable[int]):
    B = list(B)
    total = np.zeros(field.batch().shape[0])
    for term in f.terms:
        total = total + np.asarray(elementary_integral(term, field, t, B))
    return field._out(total)


def integrand_table(f: SimpleFn, space: SpatialGrid, time: TimeGrid) -> np.ndarray:
    """Values of a deterministic simple function on (cell, step), shape (C, K)."""
    if not f.deterministic:
        raise ValueError("only deterministic coefficients have a closed-form table")
    F = np.zeros((space.n_cells, time.steps))
    for term in f.terms:
        ka, kb = time.index_of(term.a), time.index_of(term.b)
        F[space.cells(term.cells), ka:kb] += term.X
    return F


def walsh_norm(f: SimpleFn, space: SpatialGrid, time: TimeGrid) -> float:
    """||f||_M = (int int f^2 dx ds)^(1/2) for the white-noise dominating measure."""
    F = integrand_table(f, space, time)
    return float(np.sqrt(np.sum(F**2 * np.multiply.outer(space.volumes, time.dt))))


@dataclass(frozen=True)
class BridgeResult:
    lhs: Union[float, np.ndarray]
    rhs: Union[float, np.ndarray]

    @property
    def residual(self):
        return np.abs(np.asarray(self.lhs) - np.asarray(self.rhs))


ORTHONORMAL = "orthonormal"
LITERAL = "literal"


def product_form(f: SimpleFn, time: TimeGrid) -> tuple[np.ndarray, tuple, list]:
    """Split f(t, x) = f(t) 1_A(x) into (cells of A, partition, block values)."""
    if not f.terms:
        return np.zeros(0, dtype=np.int64), (0, time.steps), [0.0]
    if not f.deterministic:
        raise NotProductForm("bridge integrands need deterministic step values")
    sets = {t.cells for t in f.terms}
    if len(sets) != 1:
        raise NotProductForm("all terms must share one spatial set A")
    cuts = {0}
    for t in f.terms:
        cuts.update((time.index_of(t.a), time.index_of(t.b)))
    part = tuple(sorted(cuts))
    if len(part) == 1:
        part = (0, time.steps)
    values = []
    for lo, hi in zip(part, part[1:]):
        values.append(sum(t.X for t in f.terms if time.index_of(t.a) <= lo and hi <= time.index_of(t.b)))
    return np.asarray(sorted(sets.pop()), dtype=np.int64), part, values


def bridge_check(
    f: SimpleFn, field: WhiteNoiseField, normalization: str = ORTHONORMAL, weights=None
) -> BridgeResult:
    """Integrate f(t) 1_A both ways: as a cylindrical integral and as f.M_T(D).

    The cylindrical side uses U = span of cell indicators with Q = I and
    channels beta_c(t) = W(t, e_c). With ``normalization="orthonormal"``,
    e_c = 1_c / sqrt(mes c); ``"literal"`` uses e_c = 1_c / mes c, which is
    not orthonormal unless every cell has unit volume.
    """
    space, time = field.space, field.time
    A, part, values = product_form(f, time)
    space.cells(A)
    C = space.n_cells
    vol = space.volumes
    T = time.T
    if normalization == ORTHONORMAL:
        coeff, channel_scale = np.sqrt(vol), 1.0 / np.sqrt(vol)
    elif normalization == LITERAL:
        coeff, channel_scale = np.ones(C), 1.0 / vol
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    mask = np.zeros(C)
    mask[A] = 1.0
    ops = np.stack([v * (mask * coeff)[None, :] for v in values])
    U = TruncatedSpace(C, "U")
    phi = StepIntegrand(time, part, U, TruncatedSpace(1, "Y"), operators=ops)
    w = np.arange(1, C + 1, dtype=np.float64) ** -2 if weights is None else weights
    triple = build_embedding(SpectralCovariance(np.ones(C), CYLINDRICAL), w)
    inc = field.batch() * channel_scale[None, :, None]
    driver = BrownianDriver(time, inc if field.batched else inc[0], field.seed)
    lhs = integrate_cylindrical(phi, driver, triple, C, T).value[..., 0]
    rhs = simple_integral(f, field, T, space.all_cells())
    return BridgeResult(lhs if field.batched else float(lhs), rhs)
