"""Select the compiled kernels when available, else the numpy fallback.

Set ``CYLWIENER_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("CYLWIENER_PURE_PYTHON", "") not in ("", "0"):
    from ._fallback import masked_block_sum, step_integral, welford_update

    BACKEND = "python"
else:
    try:
        from ._kernels import masked_block_sum, step_integral, welford_update

        BACKEND = "cython"
    except ImportError:
        from ._fallback import masked_block_sum, step_integral, welford_update

        BACKEND = "python"

__all__ = ["BACKEND", "masked_block_sum", "step_integral", "welford_update"]
