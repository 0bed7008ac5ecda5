"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

Loops run in the same order as the compiled versions and vectorize only
across replicas, where each element sees an identical sequence of IEEE
operations. Results are therefore bit-identical to the extension.
"""

import math

import numpy as np


def step_integral(phi, dbeta):
    phi = np.asarray(phi, dtype=np.float64)
    dbeta = np.asarray(dbeta, dtype=np.float64)
    R, m, L = dbeta.shape
    Y = phi.shape[3]
    if phi.shape[1] != L or phi.shape[2] < m:
        raise ValueError("phi and dbeta shapes disagree")
    if phi.shape[0] not in (1, R):
        raise ValueError("phi replica axis must be 1 or match dbeta")
    out = np.zeros((R, m, Y))
    acc = np.zeros((R, Y))
    for j in range(m):
        for l in range(L):
            acc = acc + phi[:, l, j, :] * dbeta[:, j, l, None]
        out[:, j, :] = acc
    return out


def masked_block_sum(inc, cells, k_lo, k_hi):
    inc = np.asarray(inc, dtype=np.float64)
    cells = np.asarray(cells, dtype=np.int64)
    if k_lo < 0 or k_hi > inc.shape[2]:
        raise IndexError("step range outside the field")
    if np.any(cells < 0) or np.any(cells >= inc.shape[1]):
        raise IndexError("cell index out of range")
    s = np.zeros(inc.shape[0])
    for c in cells:
        for k in range(k_lo, k_hi):
            s = s + inc[:, c, k]
    return s


def welford_update(count, mean, m2, x):
    count = int(count)
    for v in np.asarray(x, dtype=np.float64).tolist():
        if not math.isfinite(v):
            raise ValueError("non-finite sample")
        count += 1
        delta = v - mean
        mean = mean + delta / count
        m2 = m2 + delta * (v - mean)
    return count, mean, m2
