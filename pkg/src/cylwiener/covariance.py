"""Spectral covariances, the Cameron-Martin space and the embedding into U1.

The covariance Q is diagonal in the coordinate basis of U with eigenvalues
``lam``. In the same coordinates:

* U0 = Q^{1/2}(U) carries weights ``1/lam`` and has orthonormal basis
  ``g_j = sqrt(lam_j) e_j``;
* U1 carries user-chosen weights ``w``; the embedding J: U0 -> U1 is the
  identity matrix and ``Q1 = J J* = diag(lam * w)`` as an operator on U1.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .hilbert import DimensionMismatch, LinOp, TruncatedSpace, adjoint, compose, trace

NUCLEAR = "nuclear"
CYLINDRICAL = "cylindrical"
PRESETS = (NUCLEAR, CYLINDRICAL)

#: A truncated trace sum(w * lam) above this makes the embedding premise meaningless.
CONDITIONING_LIMIT = 1e6


class ConditioningWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class SpectralCovariance:
    eigenvalues: np.ndarray
    tag: str = NUCLEAR

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=np.float64).ravel()
        if lam.size == 0:
            raise ValueError("at least one eigenvalue required")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be non-increasing")
        if self.tag not in PRESETS:
            raise ValueError(f"tag must be one of {PRESETS}, got {self.tag!r}")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def space(self) -> TruncatedSpace:
        return TruncatedSpace(self.dim, "U")

    def as_operator(self) -> LinOp:
        U = self.space
        return LinOp(np.diag(self.eigenvalues), U, U)

    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def truncated(self, m: int) -> "SpectralCovariance":
        if not 1 <= m <= self.dim:
            raise ValueError(f"truncation {m} outside 1..{self.dim}")
        return SpectralCovariance(self.eigenvalues[:m], self.tag)


def cameron_martin_basis(Q: SpectralCovariance) -> np.ndarray:
    """Rows are g_j = sqrt(lam_j) e_j, an orthonormal basis of U0."""
    return np.diag(np.sqrt(Q.eigenvalues))


def l20_norm(psi: LinOp, Q: SpectralCovariance) -> float:
    """sqrt(tr(psi Q psi*)), the Hilbert-Schmidt norm of psi on U0."""
    if psi.domain.dim != Q.dim or not psi.domain.same_as(Q.space):
        raise DimensionMismatch(f"psi must act on U of dim {Q.dim}")
    inner = compose(psi, compose(Q.as_operator(), adjoint(psi)))
    return float(np.sqrt(max(trace(inner), 0.0)))


@dataclass(frozen=True, eq=False)
class EmbeddingTriple:
    Q: SpectralCovariance
    weights: np.ndarray
    J: LinOp
    J_adj: LinOp
    Q1: LinOp

    @property
    def U(self) -> TruncatedSpace:
        return self.Q.space

    @property
    def U0(self) -> TruncatedSpace:
        return self.J.domain

    @property
    def U1(self) -> TruncatedSpace:
        return self.J.codomain

    @property
    def dim(self) -> int:
        return self.Q.dim

    def g(self) -> np.ndarray:
        return cameron_martin_basis(self.Q)

    def g_norms_u1(self) -> np.ndarray:
        """||g_j||^2 in U1, j = 1..n."""
        return self.Q.eigenvalues * self.weights

    def trace_q1(self) -> float:
        return trace(self.Q1)

    def to_dict(self) -> dict:
        return {
            "lambda": self.Q.eigenvalues.tolist(),
            "weights": self.weights.tolist(),
            "tag": self.Q.tag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingTriple":
        try:
            Q = SpectralCovariance(d["lambda"], d.get("tag", NUCLEAR))
            return build_embedding(Q, d["weights"])
        except KeyError as exc:
            raise ValueError(f"embedding object lacks field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "EmbeddingTriple":
        return cls.from_dict(json.loads(text))


def build_embedding(Q: SpectralCovariance, weights) -> EmbeddingTriple:
    w = np.array(weights, dtype=np.float64).ravel()
    if w.shape != (Q.dim,):
        raise DimensionMismatch(f"{Q.dim} weights expected, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("U1 weights must be finite and strictly positive")
    total = float(np.sum(w * Q.eigenvalues))
    if total > CONDITIONING_LIMIT:
        warnings.warn(
            f"truncated trace of Q1 is {total:.3g}; the embedding is badly conditioned",
            ConditioningWarning,
            stacklevel=2,
        )
    U0 = TruncatedSpace(Q.dim, "U0", 1.0 / Q.eigenvalues)
    U1 = TruncatedSpace(Q.dim, "U1", w)
    J = LinOp(np.eye(Q.dim), U0, U1)
    J_adj = adjoint(J)
    w.setflags(write=False)
    return EmbeddingTriple(Q, w, J, J_adj, compose(J, J_adj))


def preset(name: str, n: int) -> EmbeddingTriple:
    """NUCLEAR: lam_j = 2^-j with U1 = U.  CYLINDRICAL: Q = I with w_j = j^-2."""
    j = np.arange(1, n + 1, dtype=np.float64)
    if name == NUCLEAR:
        return build_embedding(SpectralCovariance(2.0**-j, NUCLEAR), np.ones(n))
    if name == CYLINDRICAL:
        return build_embedding(SpectralCovariance(np.ones(n), CYLINDRICAL), j**-2)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


def q1_isometry_check(triple: EmbeddingTriple, u) -> tuple[float, float]:
    """(||u||_U0, ||Q1^{-1/2} u||_U1); equal whenever Im Q1^{1/2} = U0."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (triple.dim,):
        raise DimensionMismatch(f"u must have length {triple.dim}")
    q = np.diag(triple.Q1.entries)
    if np.any(q <= 0) or np.count_nonzero(triple.Q1.entries - np.diag(q)):
        raise np.linalg.LinAlgError("Q1 is not a positive diagonal operator")
    lhs = float(triple.U0.norm(u))
    rhs = float(triple.U1.norm(u / np.sqrt(q)))
    return lhs, rhs
