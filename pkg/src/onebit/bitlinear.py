"""BitLinear: a dense layer with 1-bit weights and quantized activations.

Forward pipeline: grouped LN on the input, absmax quantization to b-bit
integer codes, an additive sign/code matmul in exact integer arithmetic,
then a per-element rescale by beta * gamma / Q_b. The high-precision
latent weight is binarized on the fly each call during training; an
exported layer carries only the packed signs and scales.

Backward uses the straight-through estimator: Sign, rounding and Clip
are treated as identity maps, the scale statistics (alpha, beta, gamma,
eta) are treated as constants, and only the LN gradient is exact.

The layer also supports a full-precision path (``quantize=False``) that
skips binarization and activation quantization entirely; it serves both
as the fp training arm and as the test hook for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor, _kernels
from .quant import (
    BinarizedWeight,
    PartitionError,
    QuantizedActivation,
    binarize_weight,
    dequantize,
    group_layernorm_backward,
    group_layernorm_stats,
    quantize_nonneg,
    quantize_signed,
)
from .tensor import Rng, ShapeError, check_matrix, gaussian_init


class TraceMismatchError(ValueError):
    """Raised when a backward pass receives a trace from a different forward."""


@dataclass
class BitLinearLayer:
    """Configuration plus weights for one layer.

    Exactly one of ``latent`` (training) and ``frozen`` (inference
    export) is set. ``mode`` selects the activation quantizer: "signed"
    everywhere except layers whose output feeds a ReLU, which use
    "nonnegative". ``apply_ln=False`` drops the internal normalization
    (used by the pre-LN architecture arm and by unit tests).
    """

    latent: np.ndarray | None
    groups_w: int = 1
    groups_act: int = 1
    bits: int = 8
    mode: str = "signed"
    ln_eps: float = 1e-5
    apply_ln: bool = True
    quantize: bool = True
    frozen: BinarizedWeight | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.latent is None) == (self.frozen is None):
            raise ValueError("layer needs exactly one of latent or frozen weights")
        if self.mode not in ("signed", "nonnegative"):
            raise ValueError(f"unknown activation mode {self.mode!r}")
        n_out = self.latent.shape[0] if self.latent is not None else self.frozen.rows
        if self.groups_w < 1 or n_out % self.groups_w != 0:
            raise PartitionError(f"{self.groups_w} weight groups do not divide {n_out} rows")

    @property
    def n_out(self) -> int:
        return self.latent.shape[0] if self.latent is not None else self.frozen.rows

    @property
    def n_in(self) -> int:
        return self.latent.shape[1] if self.latent is not None else self.frozen.cols


def make_layer(
    n_out: int,
    n_in: int,
    rng: Rng,
    groups_w: int = 1,
    groups_act: int = 1,
    bits: int = 8,
    mode: str = "signed",
    ln_eps: float = 1e-5,
    apply_ln: bool = True,
    quantize: bool = True,
) -> BitLinearLayer:
    """Kaiming-initialized training layer (latent weight N(0, 2/n_in))."""
    w = gaussian_init(n_out, n_in, fan_in=n_in, rng=rng)
    return BitLinearLayer(
        latent=w, groups_w=groups_w, groups_act=groups_act, bits=bits,
        mode=mode, ln_eps=ln_eps, apply_ln=apply_ln, quantize=quantize,
    )


@dataclass
class ForwardTrace:
    """Everything backward needs from one forward call."""

    x: np.ndarray
    normed: np.ndarray  # LN output (== x when apply_ln is False)
    ln_denoms: np.ndarray | None
    act_groups: int
    qa: QuantizedActivation | None
    bw: BinarizedWeight | None
    shape: tuple[int, int]  # (n_out, n_in) of the producing layer


def _quantize_act(layer: BitLinearLayer, u: np.ndarray, act_groups: int) -> QuantizedActivation:
    if layer.mode == "nonnegative":
        return quantize_nonneg(u, layer.bits, act_groups)
    return quantize_signed(u, layer.bits, act_groups)


def packed_matmul(bw: BinarizedWeight, qa: QuantizedActivation) -> np.ndarray:
    """Exact integer product of a sign matrix with a code matrix.

    out[i][j] = sum_t s[i, t] * codes[t, j], computed additively (the
    inner loop only adds or subtracts codes). Returns int64.
    """
    if bw.cols != qa.rows:
        raise ShapeError(f"inner dimensions mismatch: {bw.rows}x{bw.cols} signs vs {qa.rows}x{qa.cols} codes")
    out = np.empty((bw.rows, qa.cols), dtype=np.int64)
    _kernels.sign_matmul(bw.sign_bits(), qa.codes, out)
    return out


def forward(
    layer: BitLinearLayer, x: np.ndarray, act_groups: int | None = None
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the layer on a (tokens, n_in) input.

    ``act_groups`` overrides the layer's activation/LN grouping for this
    call (pass ``x.shape[0]`` for per-token scales at inference).
    """
    x = check_matrix(x, "x")
    if x.shape[1] != layer.n_in:
        raise ShapeError(f"input has {x.shape[1]} features, layer expects {layer.n_in}")
    ga = layer.groups_act if act_groups is None else act_groups

    if layer.apply_ln:
        u, _, denoms = group_layernorm_stats(x, ga, layer.ln_eps)
    else:
        u, denoms = x, None

    if not layer.quantize:
        if layer.latent is None:
            raise ValueError("full-precision path requires latent weights")
        y = tensor.matmul_nt(u, layer.latent)
        trace = ForwardTrace(x=x, normed=u, ln_denoms=denoms, act_groups=ga,
                             qa=None, bw=None, shape=(layer.n_out, layer.n_in))
        return y, trace

    qa = _quantize_act(layer, u, ga)
    bw = layer.frozen if layer.frozen is not None else binarize_weight(layer.latent, layer.groups_w)

    y_int = np.empty((x.shape[0], layer.n_out), dtype=np.int64)
    _kernels.sign_matmul_nt(qa.codes, bw.sign_bits(), y_int)

    beta_col = bw.beta_per_row().astype(np.float64)  # per output feature
    gamma_row = qa.gamma_per_row().astype(np.float64)
    y = y_int.astype(np.float64) * (gamma_row / qa.qb)[:, None] * beta_col[None, :]
    if qa.mode == "nonnegative":
        # dequantized input carries a +eta shift; signs sum it per output row
        y += qa.eta_per_row().astype(np.float64)[:, None] * (
            beta_col * bw.row_sums().astype(np.float64)
        )[None, :]
    y = y.astype(np.float32)

    trace = ForwardTrace(x=x, normed=u, ln_denoms=denoms, act_groups=ga,
                         qa=qa, bw=bw, shape=(layer.n_out, layer.n_in))
    return y, trace


def backward(
    layer: BitLinearLayer, trace: ForwardTrace, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Straight-through gradients: returns (dL/dx, dL/dlatent).

    The quantize and binarize stages pass gradients through unchanged;
    beta, gamma and eta are constants; LN backward is exact.
    """
    dy = check_matrix(dy, "dy")
    if trace.shape != (layer.n_out, layer.n_in):
        raise TraceMismatchError(f"trace is for a {trace.shape} layer, got {(layer.n_out, layer.n_in)}")
    if dy.shape != (trace.x.shape[0], layer.n_out):
        raise TraceMismatchError(f"dy shape {dy.shape} does not match trace ({trace.x.shape[0]}, {layer.n_out})")

    if trace.qa is None:  # full-precision path
        dw = tensor.matmul_tn(dy, trace.normed)
        du = tensor.matmul(dy, layer.latent)
    else:
        x_hat = dequantize(trace.qa)
        beta_col = trace.bw.beta_per_row()
        w_eff = trace.bw.unpack() * beta_col[:, None]
        dw = tensor.matmul_tn(dy, x_hat) * beta_col[:, None]
        du = tensor.matmul(dy, w_eff)

    if layer.apply_ln:
        dx = group_layernorm_backward(du, trace.normed, trace.ln_denoms, trace.act_groups)
    else:
        dx = du
    return dx, dw


def partitioned_forward(layer: BitLinearLayer, x: np.ndarray, devices: int) -> np.ndarray:
    """Simulate tensor parallelism: shard output rows, compute locally, concat.

    Each shard re-derives its own binarization scales and LN statistics,
    so no values cross shard boundaries; the result is bit-identical to
    the unpartitioned forward with the same group configuration.
    """
    if layer.latent is None:
        raise ValueError("partitioned_forward requires latent weights")
    n_out = layer.n_out
    if devices < 1 or n_out % devices != 0:
        raise PartitionError(f"{devices} devices do not divide {n_out} output rows")
    if layer.groups_w % devices != 0:
        raise PartitionError(
            f"{layer.groups_w} weight groups are not aligned to {devices} partitions"
        )
    shard_rows = n_out // devices
    outs = []
    for d in range(devices):
        shard = BitLinearLayer(
            latent=np.ascontiguousarray(layer.latent[d * shard_rows : (d + 1) * shard_rows]),
            groups_w=layer.groups_w // devices,
            groups_act=layer.groups_act,
            bits=layer.bits,
            mode=layer.mode,
            ln_eps=layer.ln_eps,
            apply_ln=layer.apply_ln,
            quantize=layer.quantize,
        )
        y_d, _ = forward(shard, x)
        outs.append(y_d)
    return np.ascontiguousarray(np.hstack(outs))
