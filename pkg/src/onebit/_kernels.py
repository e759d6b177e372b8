"""Numba kernels with a fixed, documented accumulation order.

Every matmul accumulates each output element in float64 over the inner
index in ascending order; every reduction scans row-major ascending.
This makes results bit-for-bit reproducible across runs and exactly
equal to naive loop oracles, which the tests rely on.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def matmul_nn(a, b, out):
    # out[i, j] = sum_t a[i, t] * b[t, j], t ascending, float64 accumulator
    n, k = a.shape
    m = b.shape[1]
    for i in range(n):
        acc = np.zeros(m, dtype=np.float64)
        for t in range(k):
            ait = np.float64(a[i, t])
            for j in range(m):
                acc[j] += ait * np.float64(b[t, j])
        for j in range(m):
            out[i, j] = np.float32(acc[j])


@njit(cache=True)
def matmul_nt(a, b, out):
    # out[i, j] = sum_t a[i, t] * b[j, t]; both operands walked row-wise
    n, k = a.shape
    m = b.shape[0]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += np.float64(a[i, t]) * np.float64(b[j, t])
            out[i, j] = np.float32(acc)


@njit(cache=True)
def matmul_tn(a, b, out):
    # out[i, j] = sum_t a[t, i] * b[t, j], t ascending over rows of both
    k, n = a.shape
    m = b.shape[1]
    acc = np.zeros((n, m), dtype=np.float64)
    for t in range(k):
        for i in range(n):
            ati = np.float64(a[t, i])
            for j in range(m):
                acc[i, j] += ati * np.float64(b[t, j])
    for i in range(n):
        for j in range(m):
            out[i, j] = np.float32(acc[i, j])


@njit(cache=True)
def sum2d(x):
    acc = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            acc += np.float64(x[i, j])
    return acc


@njit(cache=True)
def sumsq_dev2d(x, mu):
    acc = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            d = np.float64(x[i, j]) - mu
            acc += d * d
    return acc


@njit(cache=True)
def max_abs2d(x):
    best = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            v = abs(np.float64(x[i, j]))
            if v > best:
                best = v
    return best


@njit(cache=True)
def min2d(x):
    best = np.float64(x[0, 0])
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            v = np.float64(x[i, j])
            if v < best:
                best = v
    return best


@njit(cache=True)
def sum_abs2d(x):
    acc = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            acc += abs(np.float64(x[i, j]))
    return acc


@njit(cache=True)
def sign_matmul(bits, codes, out):
    # out[i, j] = sum_t s[i, t] * codes[t, j] with s = 2*bits - 1 in {-1, +1}.
    # Additive inner loop: no multiplies, exact int64 accumulation.
    n, k = bits.shape
    m = codes.shape[1]
    for i in range(n):
        acc = np.zeros(m, dtype=np.int64)
        for t in range(k):
            if bits[i, t] != 0:
                for j in range(m):
                    acc[j] += np.int64(codes[t, j])
            else:
                for j in range(m):
                    acc[j] -= np.int64(codes[t, j])
        for j in range(m):
            out[i, j] = acc[j]


@njit(cache=True)
def sign_matmul_nt(codes, bits, out):
    # out[r, i] = sum_t s[i, t] * codes[r, t]; row-major walk of both inputs
    rows, k = codes.shape
    n = bits.shape[0]
    for r in range(rows):
        for i in range(n):
            acc = np.int64(0)
            for t in range(k):
                c = np.int64(codes[r, t])
                if bits[i, t] != 0:
                    acc += c
                else:
                    acc -= c
            out[r, i] = acc
