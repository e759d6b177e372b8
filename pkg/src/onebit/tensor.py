"""Minimal deterministic 2-D numeric substrate.

A matrix throughout this package is a C-contiguous 2-D float32 numpy
array. Elementwise arithmetic is plain numpy (trivially deterministic);
matrix products and reductions go through the kernels in
:mod:`onebit._kernels`, which accumulate in float64 with a fixed
ascending index order. Two consequences the rest of the package relies
on:

* the same inputs produce bit-identical outputs on every run, and
* results equal naive loop oracles exactly, so tests can assert ``==``
  instead of ``allclose``.

Random numbers come from PCG64 seeded through ``numpy.random.SeedSequence``,
whose ``spawn`` mechanism gives independent, reproducible per-layer
streams from a single root seed.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Raised when matrix dimensions are invalid or incompatible."""


def as_matrix(data) -> np.ndarray:
    """Coerce nested sequences or an array to a C-contiguous 2-D float32 array."""
    x = np.ascontiguousarray(data, dtype=np.float32)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={x.ndim}")
    return x


def check_matrix(x: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 2 or x.dtype != np.float32:
        raise ShapeError(f"{name} must be a 2-D float32 array")
    if not x.flags.c_contiguous:
        x = np.ascontiguousarray(x)
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product ``a @ b`` with float64 accumulation in ascending inner order.

    Raises:
        ShapeError: if the inner dimensions do not match.
    """
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions mismatch: {a.shape} x {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float32)
    _kernels.matmul_nn(a, b, out)
    return out


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b.T`` without materializing the transpose; same accumulation contract."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"inner dimensions mismatch: {a.shape} x {b.shape}.T")
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float32)
    _kernels.matmul_nt(a, b, out)
    return out


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a.T @ b`` without materializing the transpose; ascending row accumulation."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"inner dimensions mismatch: {a.shape}.T x {b.shape}")
    out = np.empty((a.shape[1], b.shape[1]), dtype=np.float32)
    _kernels.matmul_tn(a, b, out)
    return out


def sum_all(x: np.ndarray) -> float:
    """Sum of all entries, float64, row-major ascending order."""
    return _kernels.sum2d(check_matrix(x))


def mean_all(x: np.ndarray) -> float:
    x = check_matrix(x)
    return _kernels.sum2d(x) / x.size


def max_abs(x: np.ndarray) -> float:
    """Largest absolute entry (the infinity norm of the flattened matrix)."""
    return _kernels.max_abs2d(check_matrix(x))


def min_all(x: np.ndarray) -> float:
    x = check_matrix(x)
    if x.size == 0:
        raise ShapeError("min of an empty matrix")
    return _kernels.min2d(x)


def mean_abs(x: np.ndarray) -> float:
    """Mean absolute entry (l1 norm divided by the element count)."""
    x = check_matrix(x)
    return _kernels.sum_abs2d(x) / x.size


def variance(x: np.ndarray) -> float:
    """Population variance (divide by N), two-pass, ordered accumulation."""
    x = check_matrix(x)
    mu = _kernels.sum2d(x) / x.size
    return _kernels.sumsq_dev2d(x, mu) / x.size


class Rng:
    """Reproducible random stream: PCG64 over a ``SeedSequence``.

    ``split`` spawns an independent child stream, so a model can hand
    each layer its own generator while staying a pure function of the
    root seed.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self) -> "Rng":
        """Spawn an independent child stream (deterministic given the root seed)."""
        return Rng(self._seq.spawn(1)[0])

    def normal(self, rows: int, cols: int, std: float = 1.0) -> np.ndarray:
        if rows <= 0 or cols <= 0:
            raise ShapeError(f"invalid shape ({rows}, {cols})")
        out = self._gen.standard_normal((rows, cols), dtype=np.float32)
        if std != 1.0:
            out *= np.float32(std)
        return out

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def uniform(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.random((rows, cols), dtype=np.float32)


def gaussian_init(rows: int, cols: int, fan_in: int, rng: Rng) -> np.ndarray:
    """Kaiming-style init: i.i.d. samples from N(0, 2/fan_in).

    Raises:
        ShapeError: on non-positive dimensions or fan_in.
    """
    if fan_in <= 0:
        raise ShapeError(f"fan_in must be positive, got {fan_in}")
    std = float(np.sqrt(2.0 / fan_in))
    return rng.normal(rows, cols, std=std)
