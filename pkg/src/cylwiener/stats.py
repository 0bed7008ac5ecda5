"""Monte Carlo estimators: streaming moments, CLT bands and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import welford_update


@dataclass(frozen=True)
class EstimatorState:
    """Running (count, mean, M2) for a scalar stream."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def variance(self) -> float:
        if self.count < 2:
            raise ValueError("variance needs at least two samples")
        return self.m2 / (self.count - 1)

    @property
    def se(self) -> float:
        """Standard error of the mean."""
        return math.sqrt(self.variance / self.count)


def update(state: EstimatorState, sample: float) -> EstimatorState:
    return EstimatorState(*welford_update(state.count, state.mean, state.m2, np.array([sample], dtype=float)))


def update_many(state: EstimatorState, samples) -> EstimatorState:
    x = np.ascontiguousarray(np.ravel(samples), dtype=np.float64)
    return EstimatorState(*welford_update(state.count, state.mean, state.m2, x))


def estimate(samples) -> EstimatorState:
    return update_many(EstimatorState(), samples)


def merge(a: EstimatorState, b: EstimatorState) -> EstimatorState:
    """Pairwise combination of two partial states (Chan et al.)."""
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return EstimatorState(n, mean, m2)


def merge_all(states) -> EstimatorState:
    """Left fold in the given order; callers fix the order for reproducibility."""
    out = EstimatorState()
    for s in states:
        out = merge(out, s)
    return out


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    margin: float  # |estimate - target| - z * se; positive means outside the band

    def __bool__(self):
        return self.passed


def ci_check(estimate: float, target: float, se: float, z: float = 3.0) -> CheckResult:
    if se < 0:
        raise ValueError("standard error must be non-negative")
    margin = abs(estimate - target) - z * se
    return CheckResult(bool(margin <= 0.0), float(margin))


def upper_check(estimate: float, bound: float, se: float, z: float = 3.0) -> CheckResult:
    """One-sided: estimate <= bound + z * se."""
    if se < 0:
        raise ValueError("standard error must be non-negative")
    margin = estimate - bound - z * se
    return CheckResult(bool(margin <= 0.0), float(margin))


def two_sample_check(a: EstimatorState, b: EstimatorState, z: float = 3.0) -> CheckResult:
    """Equality of means of two independent samples."""
    return ci_check(a.mean, b.mean, math.hypot(a.se, b.se), z)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def rate_fit(pairs) -> RateFit:
    """Least-squares line through (log m, log error)."""
    pts = np.asarray(pairs, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("rate_fit needs at least three (m, error) pairs")
    if np.any(pts <= 0):
        raise ValueError("m and error values must be positive")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit(float(slope), float(intercept), r2)
