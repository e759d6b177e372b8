"""Quantization primitives: 1-bit weights, absmax activations, grouped LN.

Weight binarization maps a float matrix to {-1, +1} signs plus two
per-group scalars: alpha (the mean subtracted before taking signs) and
beta (the mean absolute value, restoring magnitude after the sign
matmul). Activations get b-bit integer codes scaled by the per-group
absolute maximum gamma; a second mode shifts by the group minimum eta
first so all codes are non-negative, for inputs feeding ReLU-family
nonlinearities.

Grouping is along rows. Every grouped operation processes each row slab
with the exact same code path as its ungrouped form, so a grouped result
is bit-identical to concatenating independent per-slab computations.
That is the property that lets tensor-parallel shards compute their
scales locally with no cross-shard communication.

Sign convention: entries equal to the group mean binarize to -1.
Integer code ranges are symmetric, [-(Q_b - 1), Q_b - 1] with
Q_b = 2^(b-1); clipping to the symmetric range replaces the epsilon
margin a float implementation would need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import ShapeError, check_matrix


class PartitionError(ValueError):
    """Raised when a group count does not evenly divide the grouped dimension."""


def _check_groups(rows: int, groups: int) -> int:
    if groups < 1 or rows % groups != 0:
        raise PartitionError(f"{groups} groups do not divide {rows} rows")
    return rows // groups


@dataclass
class BinarizedWeight:
    """Bit-packed sign matrix with per-group centering and scale.

    ``packed`` holds one bit per weight, row-major, LSB-first within
    each byte, each row padded to a byte boundary (this layout is part
    of the checkpoint format). Bit 1 means +1.
    """

    rows: int
    cols: int
    groups: int
    packed: np.ndarray  # uint8, shape (rows, ceil(cols / 8))
    alpha: np.ndarray  # float32, shape (groups,)
    beta: np.ndarray  # float32, shape (groups,), all >= 0

    @property
    def group_size(self) -> int:
        return self.rows // self.groups

    def sign_bits(self) -> np.ndarray:
        """Unpack to a (rows, cols) uint8 matrix of 0/1 bits."""
        return np.unpackbits(self.packed, axis=1, count=self.cols, bitorder="little")

    def unpack(self) -> np.ndarray:
        """Unpack to a float32 matrix of -1/+1 values."""
        return (self.sign_bits().astype(np.float32) * 2.0 - 1.0).astype(np.float32)

    def row_sums(self) -> np.ndarray:
        """Per-row sum of signs, exact int64 (used for the min-shift correction)."""
        bits = self.sign_bits().astype(np.int64)
        return 2 * bits.sum(axis=1) - self.cols

    def beta_per_row(self) -> np.ndarray:
        return np.repeat(self.beta, self.group_size)


@dataclass
class QuantizedActivation:
    """Integer activation codes with per-group scales.

    ``mode`` is "signed" (codes in [-(Q_b-1), Q_b-1], eta absent) or
    "nonnegative" (codes in [0, Q_b-1], eta holds the subtracted group
    minimum).
    """

    rows: int
    cols: int
    groups: int
    bits: int
    mode: str
    codes: np.ndarray  # int8, shape (rows, cols)
    gamma: np.ndarray  # float32, shape (groups,)
    eta: np.ndarray | None  # float32, shape (groups,) in nonnegative mode

    @property
    def qb(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def group_size(self) -> int:
        return self.rows // self.groups

    def gamma_per_row(self) -> np.ndarray:
        return np.repeat(self.gamma, self.group_size)

    def eta_per_row(self) -> np.ndarray:
        assert self.eta is not None
        return np.repeat(self.eta, self.group_size)


def binarize_weight(w: np.ndarray, groups: int = 1) -> BinarizedWeight:
    """Binarize a weight matrix per row group.

    Per group g: alpha_g is the mean entry, the sign bit is
    ``(w - alpha_g) > 0``, and beta_g is the mean absolute value of the
    raw (uncentered) entries.
    """
    w = check_matrix(w, "w")
    n, m = w.shape
    size = _check_groups(n, groups)
    bits = np.empty((n, m), dtype=np.uint8)
    alpha = np.empty(groups, dtype=np.float32)
    beta = np.empty(groups, dtype=np.float32)
    for g in range(groups):
        slab = w[g * size : (g + 1) * size]
        mu = _kernels.sum2d(slab) / slab.size
        alpha[g] = np.float32(mu)
        beta[g] = np.float32(_kernels.sum_abs2d(slab) / slab.size)
        bits[g * size : (g + 1) * size] = slab.astype(np.float64) > mu
    packed = np.packbits(bits, axis=1, bitorder="little")
    return BinarizedWeight(rows=n, cols=m, groups=groups, packed=packed, alpha=alpha, beta=beta)


def _bits_range(bits: int) -> int:
    if not 2 <= bits <= 8:
        raise ValueError(f"activation bits must be in 2..8, got {bits}")
    return 1 << (bits - 1)


def quantize_signed(x: np.ndarray, bits: int = 8, groups: int = 1) -> QuantizedActivation:
    """Absmax quantization to signed b-bit codes, per row group.

    Per group g: gamma_g is the max absolute entry, the real code is
    ``x * Q_b / gamma_g`` and the stored code rounds half-to-even then
    clips to [-(Q_b-1), Q_b-1]. An all-zero group stores gamma 1 with
    zero codes (no NaN, exact zero round-trip).
    """
    x = check_matrix(x, "x")
    rows, cols = x.shape
    qb = _bits_range(bits)
    size = _check_groups(rows, groups)
    codes = np.empty((rows, cols), dtype=np.int8)
    gamma = np.empty(groups, dtype=np.float32)
    for g in range(groups):
        slab = x[g * size : (g + 1) * size]
        gmax = _kernels.max_abs2d(slab)
        if gmax == 0.0:
            gamma[g] = np.float32(1.0)
            codes[g * size : (g + 1) * size] = 0
            continue
        gamma[g] = np.float32(gmax)
        real = slab.astype(np.float64) * qb / np.float64(gamma[g])
        codes[g * size : (g + 1) * size] = np.clip(np.rint(real), -(qb - 1), qb - 1).astype(np.int8)
    return QuantizedActivation(
        rows=rows, cols=cols, groups=groups, bits=bits, mode="signed",
        codes=codes, gamma=gamma, eta=None,
    )


def quantize_nonneg(x: np.ndarray, bits: int = 8, groups: int = 1) -> QuantizedActivation:
    """Min-shifted absmax quantization to [0, Q_b-1] codes, per row group.

    Per group g: eta_g is the minimum entry, gamma_g is the max absolute
    entry of the unshifted input, and the stored code is
    ``round((x - eta_g) * Q_b / gamma_g)`` clipped to [0, Q_b-1].
    """
    x = check_matrix(x, "x")
    rows, cols = x.shape
    qb = _bits_range(bits)
    size = _check_groups(rows, groups)
    codes = np.empty((rows, cols), dtype=np.int8)
    gamma = np.empty(groups, dtype=np.float32)
    eta = np.empty(groups, dtype=np.float32)
    for g in range(groups):
        slab = x[g * size : (g + 1) * size]
        gmax = _kernels.max_abs2d(slab)
        eta[g] = np.float32(_kernels.min2d(slab))
        if gmax == 0.0:
            gamma[g] = np.float32(1.0)
            codes[g * size : (g + 1) * size] = 0
            continue
        gamma[g] = np.float32(gmax)
        real = (slab.astype(np.float64) - np.float64(eta[g])) * qb / np.float64(gamma[g])
        codes[g * size : (g + 1) * size] = np.clip(np.rint(real), 0, qb - 1).astype(np.int8)
    return QuantizedActivation(
        rows=rows, cols=cols, groups=groups, bits=bits, mode="nonnegative",
        codes=codes, gamma=gamma, eta=eta,
    )


def dequantize(q: QuantizedActivation) -> np.ndarray:
    """Reconstruct real values: ``code * gamma_g / Q_b`` (+ eta_g when shifted)."""
    scale = (q.gamma_per_row().astype(np.float64) / q.qb)[:, None]
    x = q.codes.astype(np.float64) * scale
    if q.mode == "nonnegative":
        x += q.eta_per_row().astype(np.float64)[:, None]
    return x.astype(np.float32)


def group_layernorm(x: np.ndarray, groups: int = 1, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row group to zero mean, unit variance (population)."""
    y, _, _ = group_layernorm_stats(x, groups, eps)
    return y


def group_layernorm_stats(
    x: np.ndarray, groups: int = 1, eps: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grouped LN returning (output, per-group mean, per-group denom).

    The denominator is ``sqrt(var + eps)``. A slab with zero variance
    and eps == 0 yields exact zeros (the centered numerator is zero).
    """
    x = check_matrix(x, "x")
    rows, cols = x.shape
    size = _check_groups(rows, groups)
    if size * cols < 2:
        raise ShapeError("layer norm needs at least 2 elements per group")
    out = np.empty((rows, cols), dtype=np.float32)
    mus = np.empty(groups, dtype=np.float64)
    denoms = np.empty(groups, dtype=np.float64)
    for g in range(groups):
        slab = x[g * size : (g + 1) * size]
        mu = _kernels.sum2d(slab) / slab.size
        var = _kernels.sumsq_dev2d(slab, mu) / slab.size
        denom = np.sqrt(var + eps)
        mus[g] = mu
        denoms[g] = denom
        if denom == 0.0:
            out[g * size : (g + 1) * size] = 0.0
            denoms[g] = 1.0  # keeps backward finite; numerator is exactly zero
        else:
            out[g * size : (g + 1) * size] = ((slab.astype(np.float64) - mu) / denom).astype(
                np.float32
            )
    return out, mus, denoms


def group_layernorm_backward(
    dy: np.ndarray, normed: np.ndarray, denoms: np.ndarray, groups: int
) -> np.ndarray:
    """Exact analytic gradient of grouped LN.

    ``normed`` is the forward output z = (x - mu) / denom; per slab,
    dx = (dy - mean(dy) - z * mean(dy * z)) / denom with means over the
    whole slab.
    """
    dy = check_matrix(dy, "dy")
    rows = dy.shape[0]
    size = rows // groups
    dx = np.empty_like(dy)
    for g in range(groups):
        sl = slice(g * size, (g + 1) * size)
        gslab = dy[sl].astype(np.float64)
        z = normed[sl].astype(np.float64)
        gm = gslab.mean()
        gzm = (gslab * z).mean()
        dx[sl] = ((gslab - gm - z * gzm) / denoms[g]).astype(np.float32)
    return dx
