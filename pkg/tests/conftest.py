import numpy as np
import pytest

from cylwiener import _fallback
from cylwiener.stats import ci_check, estimate

try:
    from cylwiener import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [pytest.param(_fallback, id="python")]
if _kernels is not None:
    BACKENDS.append(pytest.param(_kernels, id="cython"))


def within_3se(samples, target, z=3.0):
    e = estimate(samples)
    res = ci_check(e.mean, target, e.se, z)
    return res.passed, f"mean={e.mean:.6g} target={target:.6g} se={e.se:.3g}"


def with_retries(check, seed, retries=2):
    """Run check(seed) under the 3-SE retry policy: seed, seed+1, seed+2."""
    msgs = []
    for k in range(retries + 1):
        ok, msg = check(seed + k)
        if ok:
            return
        msgs.append(msg)
    pytest.fail("statistical check failed on every attempt: " + "; ".join(msgs))


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
