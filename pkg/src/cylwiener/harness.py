"""Verification suites: configuration, Monte Carlo reduction and reports.

Every suite returns ``Row`` records comparing an estimate with an oracle.
Monte Carlo work is split into replica blocks of ``sampling.BLOCK``; block
results are merged in block order, so the output does not depend on the
number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import stats
from .covariance import PRESETS, EmbeddingTriple, SpectralCovariance, build_embedding, preset
from .hilbert import TruncatedSpace
from .integral import StepIntegrand, integrate_cylindrical, isometry_rhs, tail_second_moment
from .sampling import BLOCK, TimeGrid, check_seed, cylindrical_path, empirical_covariance, empirical_covariance_se, sample_driver
from .walsh import (
    ElementaryFn,
    SimpleFn,
    bridge_check,
    grid_from_descriptor,
    martingale_measure,
    sample_field,
    simple_integral,
    walsh_norm,
)

CONFIG_STREAM = 3
CSV_COLUMNS = ["check", "estimate", "oracle", "se", "z", "pass", "provenance", "attempt"]

SUITES = {
    "isometry": "E||int Phi dW_c||^2 against the exact L2(U0,Y) isometry for random step integrands",
    "covariance": "E(a,W_c(t))(b,W_c(s)) = (t^s)(Qa,b) and empirical Cov W_c = Q1 = JJ* in U1",
    "tail": "E||Z_n - Z_m||^2 against its closed form, and the closed form against the trace bound",
    "bridge": "cylindrical integral of f(t)1_A equals the Walsh integral pathwise over many seeds",
    "walsh": "E M_t(A)M_s(B) = (t^s) mes(A n B) and E(f.M_t(B))^2 <= ||f||_M^2 for simple f",
    "rates": "log-log decay of the exact truncation tail of W_c in U1 for the cylindrical preset",
}


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str
    preset: Optional[str] = "cylindrical"
    lam: Optional[tuple] = None
    weights: Optional[tuple] = None
    n: int = 32
    m_list: tuple = (32,)
    steps: int = 64
    T: float = 1.0
    replicas: int = 10_000
    seed: int = 0
    configs: int = 5
    y_dim: int = 4
    seeds: int = 100
    grid: dict = field(default_factory=dict)
    z: float = 3.0
    retries: int = 2

    def triple(self) -> EmbeddingTriple:
        if self.lam is not None:
            return build_embedding(SpectralCovariance(self.lam, self.preset or "nuclear"), self.weights)
        return preset(self.preset, self.n)

    def time_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.T, self.steps)


_KEYS = {
    "suite": "suite",
    "preset": "preset",
    "lambda": "lam",
    "weights": "weights",
    "n": "n",
    "m": "m_list",
    "steps": "steps",
    "T": "T",
    "replicas": "replicas",
    "seed": "seed",
    "configs": "configs",
    "yDim": "y_dim",
    "seeds": "seeds",
    "grid": "grid",
    "z": "z",
    "retries": "retries",
    "out": None,
}

SUITE_DEFAULTS = {
    "isometry": dict(n=32, m_list=(32,), steps=64, replicas=10_000, configs=5),
    "covariance": dict(n=16, m_list=(16,), steps=16, replicas=100_000, configs=10),
    "tail": dict(n=32, m_list=(4, 8, 16, 32), steps=32, replicas=10_000),
    "bridge": dict(configs=10, seeds=100),
    "walsh": dict(replicas=100_000, configs=10),
    "rates": dict(n=1024, m_list=(8, 16, 32, 64, 128), steps=1, replicas=1),
}


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    suite = d.get("suite")
    if suite not in SUITES:
        raise ConfigError(f"field 'suite': expected one of {sorted(SUITES)}, got {suite!r}")
    kw = dict(SUITE_DEFAULTS[suite])
    for key, attr in _KEYS.items():
        if attr is None or key not in d or key == "suite":
            continue
        kw[attr] = d[key]
    try:
        if "m_list" in kw:
            m = kw["m_list"]
            kw["m_list"] = tuple(int(x) for x in (m if isinstance(m, (list, tuple)) else [m]))
        for name in ("n", "steps", "replicas", "configs", "y_dim", "seeds", "retries"):
            if name in kw:
                kw[name] = int(kw[name])
        kw["seed"] = int(kw.get("seed", 0))
        for name in ("T", "z"):
            if name in kw:
                kw[name] = float(kw[name])
        if kw.get("lam") is not None:
            kw["lam"] = tuple(float(x) for x in kw["lam"])
            kw["weights"] = tuple(float(x) for x in kw.get("weights") or [1.0] * len(kw["lam"]))
            kw["n"] = len(kw["lam"])
            if "preset" not in d:
                kw["preset"] = None
        if "m" not in d and suite in ("isometry", "covariance"):
            kw["m_list"] = (kw["n"],)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad field value: {exc}") from None
    cfg = ExperimentConfig(suite=suite, **kw)
    validate(cfg)
    return cfg


def load_config(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(d)


def validate(cfg: ExperimentConfig) -> None:
    """Reject infeasible settings before any sampling."""
    def need(cond, what):
        if not cond:
            raise ConfigError(what)

    need(cfg.replicas >= 1, "field 'replicas' must be positive")
    need(cfg.n >= 1, "field 'n' must be positive")
    need(cfg.steps >= 1, "field 'steps' must be positive")
    need(cfg.T > 0, "field 'T' must be positive")
    need(cfg.configs >= 1, "field 'configs' must be positive")
    need(cfg.seeds >= 1, "field 'seeds' must be positive")
    need(cfg.y_dim >= 1, "field 'yDim' must be positive")
    need(cfg.z > 0, "field 'z' must be positive")
    need(cfg.retries >= 0, "field 'retries' must be non-negative")
    need(len(cfg.m_list) >= 1 and all(1 <= m <= cfg.n for m in cfg.m_list), "field 'm': need 1 <= m <= n")
    need(0 <= cfg.seed < 2**64 - cfg.retries - 1, "field 'seed' must be a non-negative 64-bit integer")
    if cfg.lam is None:
        need(cfg.preset in PRESETS, f"field 'preset': expected one of {PRESETS}")
    else:
        need(len(cfg.weights) == len(cfg.lam), "fields 'lambda' and 'weights' differ in length")
        try:
            cfg.triple()
        except ValueError as exc:
            raise ConfigError(f"fields 'lambda'/'weights': {exc}") from None
    if cfg.suite == "tail":
        need(len(cfg.m_list) >= 2, "field 'm': the tail suite needs at least two truncations")
    if cfg.suite == "rates":
        need(len(cfg.m_list) >= 3, "field 'm': the rates suite needs at least three truncations")
        need(max(cfg.m_list) < cfg.n, "field 'm': rates need every m below n")
    if cfg.suite in ("walsh", "bridge"):
        try:
            grid_from_descriptor(cfg.grid)
        except ValueError as exc:
            raise ConfigError(f"field 'grid': {exc}") from None


@dataclass(frozen=True)
class Row:
    check: str
    estimate: float
    oracle: float
    se: float
    z: float
    passed: bool
    provenance: str
    attempt: int = 0

    @property
    def statistical(self) -> bool:
        return self.provenance.startswith("MC")


def mc_row(check, samples_state: stats.EstimatorState, oracle, z, what="MC", upper=False) -> Row:
    se = samples_state.se
    res = stats.upper_check(samples_state.mean, oracle, se, z) if upper else stats.ci_check(samples_state.mean, oracle, se, z)
    return Row(check, samples_state.mean, float(oracle), se, z, res.passed, what)


def exact_row(check, value, oracle, passed, what="closed form") -> Row:
    return Row(check, float(value), float(oracle), 0.0, 0.0, bool(passed), what)


def _rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed, (CONFIG_STREAM << 48) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class Runner:
    """Maps block jobs over a thread pool and folds the results in order."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))

    def blocks(self, replicas: int):
        return [(s, min(BLOCK, replicas - s)) for s in range(0, replicas, BLOCK)]

    def map(self, fn: Callable, replicas: int) -> list:
        jobs = self.blocks(replicas)
        if self.threads == 1:
            return [fn(s, c) for s, c in jobs]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(lambda job: fn(*job), jobs))

    def moments(self, fn: Callable, replicas: int) -> list:
        """fn(first, count) -> (count, k) samples; returns k merged estimators."""
        per_block = self.map(lambda s, c: [stats.estimate(col) for col in np.asarray(fn(s, c)).T], replicas)
        return [stats.merge_all(col) for col in zip(*per_block)]


def random_integrand(rng, grid: TimeGrid, n: int, y_dim: int, blocks: int = 4, y_space=None) -> StepIntegrand:
    cuts = np.sort(rng.choice(np.arange(1, grid.steps), size=min(blocks - 1, grid.steps - 1), replace=False))
    part = (0, *cuts.tolist(), grid.steps)
    ops = rng.standard_normal((len(part) - 1, y_dim, n)) / math.sqrt(n)
    return StepIntegrand(grid, part, TruncatedSpace(n, "U"), y_space or TruncatedSpace(y_dim, "Y"), operators=ops)


def suite_isometry(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    triple, grid = cfg.triple(), cfg.time_grid()
    m = max(cfg.m_list)
    rng = _rng(seed, 0)
    phis = [random_integrand(rng, grid, cfg.n, cfg.y_dim) for _ in range(cfg.configs)]

    def block(first, count):
        drv = sample_driver(grid, m, seed, count, first)
        return np.column_stack(
            [np.sum(integrate_cylindrical(p, drv, triple, m, grid.T).value ** 2, axis=1) for p in phis]
        )

    ests = runner.moments(block, cfg.replicas)
    return [
        mc_row(f"isometry[{i}]", e, isometry_rhs(p, triple.Q, grid.T, m), cfg.z)
        for i, (p, e) in enumerate(zip(phis, ests))
    ]


def suite_covariance(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    triple, grid = cfg.triple(), cfg.time_grid()
    n = cfg.n
    rng = _rng(seed, 1)
    cases = []
    for _ in range(cfg.configs):
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        kt, ks = rng.integers(1, grid.steps + 1, size=2)
        cases.append((a, b, int(kt), int(ks)))

    def block(first, count):
        drv = sample_driver(grid, n, seed, count, first)
        vals = cylindrical_path(drv, triple, n).values
        cols = [(vals[:, kt] @ a) * (vals[:, ks] @ b) for a, b, kt, ks in cases]
        return np.column_stack(cols), vals[:, -1]

    parts = runner.map(block, cfg.replicas)
    rows = []
    prods = np.concatenate([p[0] for p in parts])
    Q = triple.Q.as_operator().entries
    for i, (a, b, kt, ks) in enumerate(cases):
        oracle = min(grid.nodes[kt], grid.nodes[ks]) * float(a @ Q @ b)
        rows.append(mc_row(f"kernel[{i}]", stats.estimate(prods[:, i]), oracle, cfg.z))

    final = np.concatenate([p[1] for p in parts])
    emp = empirical_covariance(final, triple.U1).entries
    se = empirical_covariance_se(final, triple.U1)
    target = grid.T * triple.Q1.entries
    for i in range(n):
        for j in range(n):
            ok = stats.ci_check(emp[i, j], target[i, j], se[i, j], cfg.z)
            rows.append(Row(f"Q1[{i},{j}]", emp[i, j], target[i, j], se[i, j], cfg.z, ok.passed, "MC"))
    tr = stats.estimate(np.sum(final**2 * triple.weights, axis=1))
    rows.append(mc_row("trace(Q1)", tr, grid.T * float(np.sum(triple.g_norms_u1())), cfg.z))
    return rows


def suite_tail(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    triple, grid = cfg.triple(), cfg.time_grid()
    ms = sorted(cfg.m_list)
    pairs = list(zip(ms, ms[1:]))
    phi = random_integrand(_rng(seed, 2), grid, cfg.n, cfg.y_dim)
    top = ms[-1]

    def block(first, count):
        drv = sample_driver(grid, top, seed, count, first)
        z = integrate_cylindrical(phi, drv, triple, top, grid.T).partial_sums
        return np.column_stack([np.sum((z[:, n - 1] - z[:, m - 1]) ** 2, axis=1) for m, n in pairs])

    ests = runner.moments(block, cfg.replicas)
    rows = []
    for (m, n), e in zip(pairs, ests):
        tm = tail_second_moment(phi, triple.Q, m, n, grid.T)
        rows.append(mc_row(f"tail[{m},{n}]", e, tm.exact, cfg.z))
        rows.append(exact_row(f"tail-bound[{m},{n}]", tm.exact, tm.bound, tm.exact <= tm.bound, "closed form (exact <= bound)"))
    return rows


def _random_cells(rng, n_cells: int, k: int) -> list:
    return sorted(rng.choice(n_cells, size=k, replace=False).tolist())


def _random_step_fn(rng, time: TimeGrid, cells, pieces: int = 3) -> SimpleFn:
    cuts = np.sort(rng.choice(np.arange(1, time.steps), size=min(pieces - 1, time.steps - 1), replace=False))
    nodes = [0, *cuts.tolist(), time.steps]
    terms = [
        ElementaryFn(float(time.nodes[lo]), float(time.nodes[hi]), cells, float(rng.normal()))
        for lo, hi in zip(nodes, nodes[1:])
    ]
    return SimpleFn(tuple(terms))


def suite_bridge(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    space, time = grid_from_descriptor(cfg.grid)
    rng = _rng(seed, 3)
    fns = [_random_step_fn(rng, time, _random_cells(rng, space.n_cells, 3)) for _ in range(cfg.configs)]
    seeds = [seed + 1000 * (i + 1) for i in range(cfg.seeds)]

    def worst(f):
        return max(float(bridge_check(f, sample_field(space, time, s)).residual) for s in seeds)

    if runner.threads == 1:
        res = [worst(f) for f in fns]
    else:
        with ThreadPoolExecutor(max_workers=runner.threads) as ex:
            res = list(ex.map(worst, fns))
    return [exact_row(f"bridge[{i}]", r, 0.0, r < 1e-10, "pathwise (max residual < 1e-10)") for i, r in enumerate(res)]


def suite_walsh(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    space, time = grid_from_descriptor(cfg.grid)
    rng = _rng(seed, 4)
    C = space.n_cells
    cov_cases = []
    for _ in range(cfg.configs):
        A = _random_cells(rng, C, int(rng.integers(1, 9)))
        B = sorted(set(_random_cells(rng, C, int(rng.integers(1, 9)))) | set(A[: int(rng.integers(0, len(A) + 1))]))
        kt, ks = rng.integers(1, time.steps + 1, size=2)
        cov_cases.append((A, B, float(time.nodes[kt]), float(time.nodes[ks])))
    ineq_cases = []
    for _ in range(cfg.configs):
        A = _random_cells(rng, C, int(rng.integers(1, 9)))
        f = _random_step_fn(rng, time, A)
        B = _random_cells(rng, C, int(rng.integers(1, 17)))
        t = float(time.nodes[rng.integers(1, time.steps + 1)])
        ineq_cases.append((f, B, t))

    def block(first, count):
        fld = sample_field(space, time, seed, count, first)
        cols = [martingale_measure(fld, t, A) * martingale_measure(fld, s, B) for A, B, t, s in cov_cases]
        for f, B, t in ineq_cases:
            cols.append(simple_integral(f, fld, t, B) ** 2)
            A = sorted(next(iter(f.terms)).cells)
            cols.append(simple_integral(f, fld, time.T, A) ** 2)
        return np.column_stack(cols)

    ests = runner.moments(block, cfg.replicas)
    rows = []
    for i, (A, B, t, s) in enumerate(cov_cases):
        rows.append(mc_row(f"white-noise-cov[{i}]", ests[i], min(t, s) * space.measure(set(A) & set(B)), cfg.z))
    k = len(cov_cases)
    for i, (f, B, t) in enumerate(ineq_cases):
        norm2 = walsh_norm(f, space, time) ** 2
        rows.append(mc_row(f"walsh-bound[{i}]", ests[k + 2 * i], norm2, cfg.z, "MC (one-sided)", upper=True))
        rows.append(mc_row(f"walsh-equality[{i}]", ests[k + 2 * i + 1], norm2, cfg.z))
    return rows


def suite_rates(cfg: ExperimentConfig, seed: int, runner: Runner) -> list:
    triple = cfg.triple()
    grid = cfg.time_grid()
    n = cfg.n
    phi = StepIntegrand.constant(grid, np.eye(n), TruncatedSpace(n, "U"), triple.U1)
    rows, pairs = [], []
    for m in sorted(cfg.m_list):
        tm = tail_second_moment(phi, triple.Q, m, n, grid.T)
        pairs.append((m, tm.exact))
        rows.append(exact_row(f"rate-tail[{m}]", tm.exact, tm.bound, tm.exact <= tm.bound, "closed form (exact <= bound)"))
    fit = stats.rate_fit(pairs)
    rows.append(exact_row("rate-slope", fit.slope, -1.0, -1.2 <= fit.slope <= -0.8, "closed form (slope in [-1.2, -0.8])"))
    return rows


SUITE_FUNCS = {
    "isometry": suite_isometry,
    "covariance": suite_covariance,
    "tail": suite_tail,
    "bridge": suite_bridge,
    "walsh": suite_walsh,
    "rates": suite_rates,
}


@dataclass
class Report:
    config: ExperimentConfig
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.check, repr(r.estimate), repr(r.oracle), repr(r.se), repr(r.z), "pass" if r.passed else "FAIL", r.provenance, r.attempt])
        return buf.getvalue()

    def rates_csv(self) -> str:
        """m vs exact tail, plot-ready."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "error"])
        for r in self.rows:
            if r.check.startswith("rate-tail["):
                w.writerow([r.check[len("rate-tail["):-1], repr(r.estimate)])
        return buf.getvalue()

    def summary(self) -> str:
        width = max([len(r.check) for r in self.rows] + [5])
        lines = [f"suite {self.config.suite}: {sum(r.passed for r in self.rows)}/{len(self.rows)} checks passed"]
        for r in self.rows:
            flag = "pass" if r.passed else "FAIL"
            retry = f"  (attempt {r.attempt})" if r.attempt else ""
            lines.append(f"  {r.check:<{width}}  {flag}  est={r.estimate:.6g}  oracle={r.oracle:.6g}  se={r.se:.3g}{retry}")
        return "\n".join(lines)


def run(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Run a suite; statistical rows that fail are retried with seed+1, seed+2, ..."""
    validate(cfg)
    runner = Runner(threads)
    fn = SUITE_FUNCS[cfg.suite]
    rows = fn(cfg, check_seed(cfg.seed), runner)
    for attempt in range(1, cfg.retries + 1):
        failing = {r.check for r in rows if r.statistical and not r.passed}
        if not failing:
            break
        fresh = {r.check: r for r in fn(cfg, cfg.seed + attempt, runner)}
        rows = [replace(fresh[r.check], attempt=attempt) if r.check in failing else r for r in rows]
    return Report(cfg, rows)
