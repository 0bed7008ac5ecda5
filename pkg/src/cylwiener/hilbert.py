"""Truncated real Hilbert spaces and bounded operators in coefficient form.

A space is ``R^dim`` with the inner product ``<u, v> = sum_k w_k u_k v_k``
(``w = 1`` unless weights are attached). Operators are dense matrices acting
on coefficient vectors; adjoints and Hilbert-Schmidt norms account for the
weights, so every quantity is the basis-free one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DimensionMismatch(ValueError):
    """Raised when operator or vector shapes do not line up."""


@dataclass(frozen=True, eq=False)
class TruncatedSpace:
    dim: int
    label: str = "U"
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64)
            if w.shape != (self.dim,):
                raise DimensionMismatch(f"{self.dim} weights expected, got shape {w.shape}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def w(self) -> np.ndarray:
        """Weight vector (ones for a Euclidean space)."""
        return np.ones(self.dim) if self.weights is None else self.weights

    def inner(self, u, v):
        """Inner product along the last axis; broadcasts over leading axes."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        if u.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise DimensionMismatch(f"vectors must have length {self.dim}")
        return np.sum(self.w * u * v, axis=-1)

    def norm(self, u):
        return np.sqrt(self.inner(u, u))

    def same_as(self, other: "TruncatedSpace") -> bool:
        return self.dim == other.dim and np.array_equal(self.w, other.w)

    def identity(self) -> "LinOp":
        return LinOp(np.eye(self.dim), self, self)


@dataclass(frozen=True, eq=False)
class LinOp:
    """Bounded operator ``domain -> codomain`` stored as a (codim, dim) matrix."""

    entries: np.ndarray
    domain: TruncatedSpace
    codomain: TruncatedSpace

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape != (self.codomain.dim, self.domain.dim):
            raise DimensionMismatch(
                f"entries of shape {a.shape} do not map dim {self.domain.dim} "
                f"to dim {self.codomain.dim}"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("operator entries must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def from_matrix(cls, matrix, domain=None, codomain=None) -> "LinOp":
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatch("operator matrix must be 2-d")
        domain = domain or TruncatedSpace(a.shape[1], "E")
        codomain = codomain or TruncatedSpace(a.shape[0], "F")
        return cls(a, domain, codomain)

    @property
    def shape(self):
        return self.entries.shape

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.domain.dim:
            raise DimensionMismatch(f"vector length {u.shape[-1]} != domain dim {self.domain.dim}")
        return u @ self.entries.T

    def __matmul__(self, other):
        if isinstance(other, LinOp):
            return compose(self, other)
        return self.apply(other)

    def scaled(self, c: float) -> "LinOp":
        return LinOp(c * self.entries, self.domain, self.codomain)

    def to_dict(self) -> dict:
        rows, cols = self.shape
        return {"rows": rows, "cols": cols, "entries": self.entries.ravel().tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, domain=None, codomain=None) -> "LinOp":
        try:
            rows, cols = int(d["rows"]), int(d["cols"])
            entries = np.asarray(d["entries"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed operator object: {exc}") from None
        if entries.size != rows * cols:
            raise DimensionMismatch(f"{entries.size} entries for a {rows}x{cols} operator")
        return cls.from_matrix(entries.reshape(rows, cols), domain, codomain)

    @classmethod
    def from_json(cls, text: str, domain=None, codomain=None) -> "LinOp":
        return cls.from_dict(json.loads(text), domain, codomain)


def adjoint(T: LinOp) -> LinOp:
    """T* with <Tx, y>_F = <x, T*y>_E, i.e. W_E^{-1} T^t W_F."""
    a = (T.entries.T * T.codomain.w[None, :]) / T.domain.w[:, None]
    return LinOp(a, T.codomain, T.domain)


def hs_norm(T: LinOp) -> float:
    """(sum_k ||T e_k||^2)^(1/2) over an orthonormal basis of the domain."""
    # orthonormal basis of a weighted domain: e_k / sqrt(w_k)
    sq = T.codomain.w[:, None] * T.entries**2 / T.domain.w[None, :]
    return float(np.sqrt(np.sum(sq)))


def trace(T: LinOp) -> float:
    if not T.domain.same_as(T.codomain):
        raise DimensionMismatch("trace needs an operator from a space into itself")
    return float(np.trace(T.entries))


def compose(A: LinOp, B: LinOp) -> LinOp:
    """A after B."""
    if not B.codomain.same_as(A.domain):
        raise DimensionMismatch(
            f"cannot compose: B maps into dim {B.codomain.dim}, A acts on dim {A.domain.dim}"
        )
    return LinOp(A.entries @ B.entries, B.domain, A.codomain)


def opnorm(T: LinOp, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration on T*T.

    Starts from the basis direction of largest image norm. Rayleigh quotients
    of a PSD matrix do not decrease under power iteration, so the estimate
    never drops below ``max_k ||T e_k||``.
    """
    # orthonormal coordinates: T' = W_F^{1/2} T W_E^{-1/2}
    a = np.sqrt(T.codomain.w)[:, None] * T.entries / np.sqrt(T.domain.w)[None, :]
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    x = np.zeros(a.shape[1])
    x[int(np.argmax(np.diag(gram)))] = 1.0
    rq = float(x @ gram @ x)
    for _ in range(max_iter):
        y = gram @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        x = y / ny
        new = float(x @ gram @ x)
        if abs(new - rq) <= tol * max(1.0, abs(new)):
            rq = max(rq, new)
            break
        rq = max(rq, new)
    return float(np.sqrt(rq))
