"""Independent reference implementations used as test oracles.

These are deliberately naive (loops, no shared code with the package)
so that exact-equality assertions against them are meaningful.
"""

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop product, float64 accumulator ascending over the inner index."""
    n, k = a.shape
    m = b.shape[1]
    out = np.empty((n, m), dtype=np.float32)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = np.float32(acc)
    return out


def outer_product_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized oracle with the same per-element operation order as naive_matmul."""
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    acc = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for t in range(a.shape[1]):
        acc += np.outer(a64[:, t], b64[t, :])
    return acc.astype(np.float32)


def seq_sum(x: np.ndarray) -> float:
    acc = 0.0
    for v in x.reshape(-1):
        acc += float(v)
    return acc


def seq_min(x: np.ndarray) -> float:
    best = float(x.reshape(-1)[0])
    for v in x.reshape(-1):
        if float(v) < best:
            best = float(v)
    return best


def seq_max_abs(x: np.ndarray) -> float:
    best = 0.0
    for v in x.reshape(-1):
        if abs(float(v)) > best:
            best = abs(float(v))
    return best


def signed_float_matmul(signs: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Float64 product of a +/-1 matrix with an integer code matrix.

    Exact for any result magnitude below 2**53, so integer equality
    against the packed kernel is a strict check.
    """
    return signs.astype(np.float64) @ codes.astype(np.float64)
