"""Stochastic integrals of step integrands against Q-Wiener and cylindrical
Wiener processes, built channel by channel from scalar Ito integrals.

For a step integrand with blocks (s_l, s_{l+1}] and operators Phi_l, the
truncated integral against W_c^(m) is

    Z_m = sum_{j<=m} sum_l Phi_l g_j (beta_j(s_{l+1} ^ t) - beta_j(s_l ^ t)).

The double sum runs through the compiled kernel with j outer and l inner, so
the recorded partial sums Z_1..Z_m end exactly at the returned value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ._backend import step_integral
from .covariance import EmbeddingTriple, SpectralCovariance, l20_norm
from .hilbert import DimensionMismatch, LinOp, TruncatedSpace
from .sampling import BrownianDriver, TimeGrid


class AdaptednessError(RuntimeError):
    """An adapted rule tried to read the driver after its block start."""


class DriverHistory:
    """Driver values on [0, s_l], the only information an adapted rule sees.

    ``path`` has shape (R, m, k + 1) where k is the grid index of s_l.
    """

    def __init__(self, values: np.ndarray, grid: TimeGrid, limit: int):
        self._values = values
        self.grid = grid
        self.limit = limit

    @property
    def path(self) -> np.ndarray:
        v = self._values[..., : self.limit + 1]
        v.setflags(write=False)
        return v

    @property
    def time(self) -> float:
        return float(self.grid.nodes[self.limit])

    def at(self, k: int) -> np.ndarray:
        """beta(t_k) for all channels, shape (R, m)."""
        if k > self.limit:
            raise AdaptednessError(
                f"rule for the block starting at t = {self.time} read beta at t = {self.grid.nodes[k]}"
            )
        return self._values[..., k]

    def now(self) -> np.ndarray:
        return self._values[..., self.limit]


Rule = Callable[[int, DriverHistory], np.ndarray]


@dataclass(frozen=True, eq=False)
class StepIntegrand:
    """Phi(s) = Phi_l on (s_l, s_{l+1}], with s_l grid nodes.

    Deterministic integrands carry ``operators`` of shape (L, dim Y, dim U).
    Adapted ones carry ``rule(l, history)`` returning Phi_l either shared,
    (dim Y, dim U), or per replica, (R, dim Y, dim U).
    """

    grid: TimeGrid
    partition: tuple
    domain: TruncatedSpace
    codomain: TruncatedSpace
    operators: Optional[np.ndarray] = None
    rule: Optional[Rule] = None

    def __post_init__(self):
        p = tuple(int(k) for k in self.partition)
        if len(p) < 2 or p[0] != 0 or any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("partition must be strictly increasing grid indices starting at 0")
        if p[-1] > self.grid.steps:
            raise ValueError("partition runs past the end of the grid")
        object.__setattr__(self, "partition", p)
        if (self.operators is None) == (self.rule is None):
            raise ValueError("give exactly one of operators or rule")
        if self.operators is not None:
            ops = np.array(self.operators, dtype=np.float64)
            if ops.shape != (len(p) - 1, self.codomain.dim, self.domain.dim):
                raise DimensionMismatch(
                    f"operators of shape {ops.shape}; expected "
                    f"{(len(p) - 1, self.codomain.dim, self.domain.dim)}"
                )
            if not np.all(np.isfinite(ops)):
                raise ValueError("operator entries must be finite")
            ops.setflags(write=False)
            object.__setattr__(self, "operators", ops)

    @classmethod
    def deterministic(cls, grid, partition, operators: Sequence, domain=None, codomain=None):
        mats = [op.entries if isinstance(op, LinOp) else np.asarray(op, float) for op in operators]
        first = operators[0]
        if isinstance(first, LinOp):
            domain = domain or first.domain
            codomain = codomain or first.codomain
        ops = np.stack(mats)
        domain = domain or TruncatedSpace(ops.shape[2], "U")
        codomain = codomain or TruncatedSpace(ops.shape[1], "Y")
        return cls(grid, tuple(partition), domain, codomain, operators=ops)

    @classmethod
    def constant(cls, grid: TimeGrid, op, domain=None, codomain=None):
        return cls.deterministic(grid, (0, grid.steps), [op], domain, codomain)

    @classmethod
    def adapted(cls, grid, partition, rule: Rule, domain: TruncatedSpace, codomain: TruncatedSpace):
        return cls(grid, tuple(partition), domain, codomain, rule=rule)

    @property
    def is_deterministic(self) -> bool:
        return self.rule is None

    @property
    def blocks(self) -> int:
        return len(self.partition) - 1

    def block_times(self, t: float) -> np.ndarray:
        """Durations (s_{l+1} ^ t) - (s_l ^ t), shape (L,)."""
        s = self.grid.nodes[list(self.partition)]
        c = np.minimum(s, t)
        return np.diff(c)

    def block(self, l: int) -> LinOp:
        if not self.is_deterministic:
            raise ValueError("adapted integrands have no fixed block operator")
        return LinOp(self.operators[l], self.domain, self.codomain)

    def scaled(self, c: float) -> "StepIntegrand":
        if self.is_deterministic:
            return StepIntegrand(self.grid, self.partition, self.domain, self.codomain, c * self.operators)
        rule = self.rule
        return StepIntegrand(
            self.grid, self.partition, self.domain, self.codomain, rule=lambda l, h: c * np.asarray(rule(l, h))
        )

    def __add__(self, other: "StepIntegrand") -> "StepIntegrand":
        if not (self.is_deterministic and other.is_deterministic) or self.partition != other.partition:
            raise ValueError("only deterministic integrands on one partition can be added")
        return StepIntegrand(
            self.grid, self.partition, self.domain, self.codomain, self.operators + other.operators
        )


@dataclass(frozen=True, eq=False)
class IntegralResult:
    """value has shape (dim Y,) or (R, dim Y); partial_sums (…, m, dim Y)."""

    value: np.ndarray
    m: int
    partial_sums: Optional[np.ndarray] = None


def _require_deterministic(phi: StepIntegrand, what: str):
    if not phi.is_deterministic:
        raise ValueError(f"{what} needs a deterministic integrand")


def _integrate(phi: StepIntegrand, driver: BrownianDriver, scales: np.ndarray, t: float) -> IntegralResult:
    m = scales.size
    if m > driver.channels:
        raise ValueError(f"truncation m = {m} exceeds the {driver.channels} driver channels")
    if m > phi.domain.dim:
        raise DimensionMismatch(f"m = {m} exceeds dim U = {phi.domain.dim}")
    if driver.grid is not phi.grid and not np.array_equal(driver.grid.nodes, phi.grid.nodes):
        raise ValueError("driver and integrand live on different time grids")
    kt = phi.grid.index_of(t)
    Y = phi.codomain.dim
    R = driver.replicas
    if m == 0:
        zero = np.zeros((R, Y))
        value = zero if driver.batched else zero[0]
        return IntegralResult(value, 0, np.zeros(value.shape[:-1] + (0, Y)))

    beta = driver.values()
    if not driver.batched:
        beta = beta[None]
    beta = beta[:, :m, :]
    part = np.asarray(phi.partition)
    lo, hi = np.minimum(part[:-1], kt), np.minimum(part[1:], kt)
    dbeta = np.ascontiguousarray(beta[:, :, hi] - beta[:, :, lo])

    L = phi.blocks
    if phi.is_deterministic:
        cols = phi.operators[:, :, :m] * scales  # column j of Phi_l times sqrt(lam_j)
        phi_cols = np.ascontiguousarray(np.swapaxes(cols, 1, 2))[None]
    else:
        phi_cols = np.zeros((R, L, m, Y))
        for l in range(L):
            if lo[l] == hi[l]:
                continue
            op = np.asarray(phi.rule(l, DriverHistory(beta, phi.grid, int(part[l]))), dtype=np.float64)
            if op.shape[-2:] != (Y, phi.domain.dim) or op.ndim not in (2, 3):
                raise DimensionMismatch(f"rule returned shape {op.shape}")
            if op.ndim == 3 and op.shape[0] != R:
                raise DimensionMismatch("per-replica rule output must match the driver batch")
            phi_cols[:, l] = np.swapaxes(op[..., :m] * scales, -1, -2)
    partial = step_integral(phi_cols, dbeta)
    value = partial[:, -1, :]
    if not driver.batched:
        partial, value = partial[0], value[0]
    return IntegralResult(value, m, partial)


def integrate_cylindrical(
    phi: StepIntegrand, driver: BrownianDriver, triple: EmbeddingTriple, m: int, t: float
) -> IntegralResult:
    """Truncated integral of phi against W_c^(m) = sum_{j<=m} g_j beta_j.

    Only the basis g_j enters, so the result is the same for every choice of
    U1 weights.
    """
    if phi.domain.dim != triple.dim:
        raise DimensionMismatch("integrand must act on U")
    if not 0 <= m <= triple.dim:
        raise ValueError(f"truncation m = {m} outside 0..{triple.dim}")
    return _integrate(phi, driver, np.sqrt(triple.Q.eigenvalues[:m]), t)


def integrate_classical(
    g: StepIntegrand, driver: BrownianDriver, Q: SpectralCovariance, m: int, t: float
) -> IntegralResult:
    """Truncated integral against the Q-Wiener process sum_i sqrt(zeta_i) beta_i d_i."""
    if g.domain.dim != Q.dim:
        raise DimensionMismatch("integrand must act on U")
    if not 0 <= m <= Q.dim:
        raise ValueError(f"truncation m = {m} outside 0..{Q.dim}")
    return _integrate(g, driver, np.sqrt(Q.eigenvalues[:m]), t)


def isometry_rhs(phi: StepIntegrand, Q: SpectralCovariance, t: float, m: Optional[int] = None) -> float:
    """sum_l duration_l * ||Phi_l||^2 in L2(U0, Y), using the first m modes of Q."""
    _require_deterministic(phi, "isometry_rhs")
    m = Q.dim if m is None else m
    if phi.domain.dim != Q.dim or not 0 <= m <= Q.dim:
        raise DimensionMismatch("integrand and covariance dimensions disagree")
    if m == 0:
        return 0.0
    Qm = Q.truncated(m)
    Um = Qm.space
    total = 0.0
    for l, dt in enumerate(phi.block_times(t)):
        if dt > 0:
            psi = LinOp(phi.operators[l][:, :m], Um, phi.codomain)
            total += dt * l20_norm(psi, Qm) ** 2
    return total


@dataclass(frozen=True)
class TailMoment:
    exact: float
    bound: float


def _opnorm_sq(a: np.ndarray, wy: np.ndarray, floor: float, tol=1e-10, max_iter=1000) -> float:
    # power iteration on the Gram matrix of a Euclidean-domain operator
    b = np.sqrt(wy)[:, None] * a
    gram = b.T @ b
    if not np.any(gram):
        return max(floor, 0.0)
    x = np.zeros(gram.shape[0])
    x[int(np.argmax(np.diag(gram)))] = 1.0
    rq = float(x @ gram @ x)
    for _ in range(max_iter):
        y = gram @ x
        x = y / np.linalg.norm(y)
        new = float(x @ gram @ x)
        done = abs(new - rq) <= tol * max(1.0, abs(new))
        rq = max(rq, new)
        if done:
            break
    return max(rq, floor)


def tail_second_moment(
    phi: StepIntegrand, Q: SpectralCovariance, m: int, n: int, t: float
) -> TailMoment:
    """E||Z_n - Z_m||^2 in closed form, with the trace-times-operator-norm bound.

    ``m == n`` is the empty range and gives zeros.
    """
    _require_deterministic(phi, "tail_second_moment")
    if m > n:
        raise ValueError(f"need m <= n, got m = {m}, n = {n}")
    if m < 0 or n > Q.dim or phi.domain.dim != Q.dim:
        raise DimensionMismatch("truncation range outside the covariance dimension")
    if m == n:
        return TailMoment(0.0, 0.0)
    lam = Q.eigenvalues[m:n]
    wy = phi.codomain.w
    exact = 0.0
    bound = 0.0
    for l, dt in enumerate(phi.block_times(t)):
        a = phi.operators[l]
        col_sq = np.sum(wy[:, None] * a**2, axis=0)
        sig_sq = _opnorm_sq(a, wy, float(col_sq.max()))
        # same expression tree on both sides; col_sq <= sig_sq termwise and
        # rounded arithmetic is monotone, so exact <= bound holds in floats
        exact += dt * float(np.sum(lam * col_sq[m:n]))
        bound += dt * float(np.sum(lam * np.full(n - m, sig_sq)))
    if exact > bound:
        raise ArithmeticError(f"tail {exact} exceeds its bound {bound}")
    return TailMoment(exact, bound)


def gaussian_oracle_covariance(phi: StepIntegrand, triple: EmbeddingTriple, m: int, t: float) -> LinOp:
    """Covariance operator on Y of the (Gaussian) truncated integral.

    Coordinates follow ``sampling.empirical_covariance``: the matrix is
    C W_Y where C is the coefficient covariance.
    """
    _require_deterministic(phi, "gaussian_oracle_covariance")
    if phi.domain.dim != triple.dim or not 0 <= m <= triple.dim:
        raise DimensionMismatch("integrand and embedding dimensions disagree")
    Y = phi.codomain
    C = np.zeros((Y.dim, Y.dim))
    s = np.sqrt(triple.Q.eigenvalues[:m])
    for l, dt in enumerate(phi.block_times(t)):
        if dt > 0:
            v = phi.operators[l][:, :m] * s  # columns Phi_l g_j
            C += dt * (v @ v.T)
    return LinOp(C * Y.w[None, :], Y, Y)
