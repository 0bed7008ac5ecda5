"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends run on identical inputs; outputs are compared bit for bit
before any timing is reported.
"""

import argparse
import time

import numpy as np

from cylwiener import _fallback

try:
    from cylwiener import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    phi = rng.standard_normal((1, 4, 32, 4))
    db = rng.standard_normal((10_000, 32, 4))
    yield "step_integral  R=1e4 L=4 m=32 Y=4", "step_integral", (phi, db)
    phi_r = rng.standard_normal((2_000, 8, 64, 2))
    db_r = rng.standard_normal((2_000, 64, 8))
    yield "step_integral  adapted R=2e3 L=8 m=64", "step_integral", (phi_r, db_r)
    inc = rng.standard_normal((10_000, 64, 16))
    cells = np.arange(0, 64, 3, dtype=np.int64)
    yield "masked_block_sum R=1e4 C=64 K=16", "masked_block_sum", (inc, cells, 2, 14)
    x = rng.standard_normal(1_000_000)
    yield "welford_update  n=1e6", "welford_update", (0, 0.0, 0.0, x)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<40} {'cython':>10} {'numpy':>10} {'speedup':>8}")
    for label, name, inputs in cases(rng):
        tc, oc = best_of(lambda: getattr(_kernels, name)(*inputs), args.repeat)
        tp, op = best_of(lambda: getattr(_fallback, name)(*inputs), args.repeat)
        same = oc == op if isinstance(oc, tuple) else np.array_equal(oc, op)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{label:<40} {tc * 1e3:>8.2f}ms {tp * 1e3:>8.2f}ms {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
