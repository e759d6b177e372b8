"""Byte-level decoder-only transformer with 1-bit linear projections.

Every linear projection (Q, K, V, attention output, both FFN matmuls)
is a BitLinear layer; embeddings, attention score/value products,
softmax and the output head stay full precision, where the parameter
count and compute are small. The FFN up-projection uses the
non-negative activation quantizer because its output feeds a ReLU.

Training keeps a high-precision latent weight per layer, binarized on
the fly each forward pass; gradients flow by the straight-through
estimator and land on the latent weights via Adam with linear-warmup,
polynomial(1)-decay learning rate and decoupled weight decay.

Backpropagation is hand-written per layer. All matmuls go through the
deterministic kernels, so a fixed seed reproduces a bit-identical loss
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bitlinear as bl
from .bitlinear import BitLinearLayer, make_layer
from .quant import group_layernorm_backward, group_layernorm_stats
from .tensor import Rng, check_matrix, matmul, matmul_nt, matmul_tn

# Byte-level vocabulary: raw bytes plus three specials.
BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 259


def encode_bytes(data: bytes) -> np.ndarray:
    """Map raw bytes to token ids (identity on 0..255)."""
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class ModelConfig:
    vocab: int = VOCAB_SIZE
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    seq_len: int = 128
    arch: str = "subln"  # "subln" (LN inside each BitLinear) or "preln" (block-entry LN)
    weight_groups: int = 1
    act_groups: int = 1
    activation_bits: int = 8
    tied_head: bool = False
    ln_eps: float = 1e-5

    def validate(self) -> "ModelConfig":
        if min(self.vocab, self.d_model, self.n_layers, self.n_heads, self.d_ff, self.seq_len) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.arch not in ("subln", "preln"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.d_model % self.weight_groups != 0 or self.d_ff % self.weight_groups != 0:
            raise ValueError("weight_groups must divide d_model and d_ff")
        if not 2 <= self.activation_bits <= 8:
            raise ValueError("activation_bits must be in 2..8")
        return self


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    warmup_updates: int = 50
    total_updates: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    weight_decay: float = 0.01
    batch_tokens: int = 512
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be >= 0")
        if not 0 <= self.warmup_updates < self.total_updates:
            raise ValueError("need 0 <= warmup_updates < total_updates")
        return self


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a model built from ``cfg``."""
    per_block = 4 * cfg.d_model * cfg.d_model + 2 * cfg.d_model * cfg.d_ff
    n = cfg.vocab * cfg.d_model + cfg.seq_len * cfg.d_model + cfg.n_layers * per_block
    if not cfg.tied_head:
        n += cfg.d_model * cfg.vocab
    return n


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    x64 -= x64.max(axis=1, keepdims=True)
    e = np.exp(x64)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


class Block:
    """One transformer block: causal self-attention plus a ReLU FFN."""

    def __init__(self, cfg: ModelConfig, rng: Rng, quantize: bool):
        self.cfg = cfg
        subln = cfg.arch == "subln"

        def layer(n_out: int, n_in: int, mode: str = "signed") -> BitLinearLayer:
            return make_layer(
                n_out, n_in, rng.split(),
                groups_w=cfg.weight_groups, groups_act=cfg.act_groups,
                bits=cfg.activation_bits, mode=mode, ln_eps=cfg.ln_eps,
                apply_ln=subln, quantize=quantize,
            )

        d = cfg.d_model
        self.q, self.k, self.v, self.o = layer(d, d), layer(d, d), layer(d, d), layer(d, d)
        self.ffn_up = layer(cfg.d_ff, d, mode="nonnegative")
        self.ffn_down = layer(d, cfg.d_ff)
        self.preln = not subln
        self._cache: dict = {}

    def layers(self) -> dict[str, BitLinearLayer]:
        return {"q": self.q, "k": self.k, "v": self.v, "o": self.o,
                "ffn_up": self.ffn_up, "ffn_down": self.ffn_down}

    def _entry_ln(self, h: np.ndarray):
        return group_layernorm_stats(h, self.cfg.act_groups, self.cfg.ln_eps)

    def forward(self, h: np.ndarray, batch: int, t_len: int) -> np.ndarray:
        cfg = self.cfg
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        scale = np.float32(1.0 / math.sqrt(dh))
        c = self._cache = {"B": batch, "T": t_len}

        if self.preln:
            a_in, _, c["ln1_denoms"] = self._entry_ln(h)
            c["ln1_out"] = a_in
        else:
            a_in = h
        qm, c["tq"] = bl.forward(self.q, a_in)
        km, c["tk"] = bl.forward(self.k, a_in)
        vm, c["tv"] = bl.forward(self.v, a_in)

        ctx = np.empty_like(qm)
        c["attn"] = []
        mask = np.triu(np.full((t_len, t_len), np.float32(-1e30)), k=1)
        for b in range(batch):
            rows = slice(b * t_len, (b + 1) * t_len)
            for head in range(heads):
                cols = slice(head * dh, (head + 1) * dh)
                qs = np.ascontiguousarray(qm[rows, cols])
                ks = np.ascontiguousarray(km[rows, cols])
                vs = np.ascontiguousarray(vm[rows, cols])
                scores = matmul_nt(qs, ks) * scale + mask
                attn = _softmax_rows(scores)
                ctx[rows, cols] = matmul(attn, vs)
                c["attn"].append((qs, ks, vs, attn))

        om, c["to"] = bl.forward(self.o, ctx)
        h1 = h + om

        if self.preln:
            f_in, _, c["ln2_denoms"] = self._entry_ln(h1)
            c["ln2_out"] = f_in
        else:
            f_in = h1
        um, c["tu"] = bl.forward(self.ffn_up, f_in)
        c["relu_mask"] = um > 0
        dm, c["td"] = bl.forward(self.ffn_down, _relu(um))
        return h1 + dm

    def backward(self, dh2: np.ndarray) -> np.ndarray:
        cfg, c = self.cfg, self._cache
        batch, t_len = c["B"], c["T"]
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        scale = np.float32(1.0 / math.sqrt(dh))
        g: dict[str, np.ndarray] = {}

        d_relu, g["ffn_down"] = bl.backward(self.ffn_down, c["td"], dh2)
        du = d_relu * c["relu_mask"].astype(np.float32)
        df_in, g["ffn_up"] = bl.backward(self.ffn_up, c["tu"], du)
        if self.preln:
            df_in = group_layernorm_backward(df_in, c["ln2_out"], c["ln2_denoms"], cfg.act_groups)
        dh1 = dh2 + df_in

        dctx, g["o"] = bl.backward(self.o, c["to"], dh1)
        dqm = np.empty_like(dctx)
        dkm = np.empty_like(dctx)
        dvm = np.empty_like(dctx)
        for b in range(batch):
            rows = slice(b * t_len, (b + 1) * t_len)
            for head in range(heads):
                cols = slice(head * dh, (head + 1) * dh)
                qs, ks, vs, attn = c["attn"].pop(0)
                dctx_s = np.ascontiguousarray(dctx[rows, cols])
                d_attn = matmul_nt(dctx_s, vs)
                dvm[rows, cols] = matmul_tn(attn, dctx_s)
                row_dot = (d_attn.astype(np.float64) * attn).sum(axis=1, keepdims=True)
                d_scores = (attn.astype(np.float64) * (d_attn - row_dot)).astype(np.float32) * scale
                dqm[rows, cols] = matmul(d_scores, ks)
                dkm[rows, cols] = matmul_tn(d_scores, qs)

        dq_in, g["q"] = bl.backward(self.q, c["tq"], dqm)
        dk_in, g["k"] = bl.backward(self.k, c["tk"], dkm)
        dv_in, g["v"] = bl.backward(self.v, c["tv"], dvm)
        da_in = dq_in + dk_in + dv_in
        if self.preln:
            da_in = group_layernorm_backward(da_in, c["ln1_out"], c["ln1_denoms"], cfg.act_groups)
        self._grads = g
        return dh1 + da_in


class Model:
    """Full language model: embeddings, blocks, final per-token LN, head."""

    def __init__(self, cfg: ModelConfig, rng: Rng, quantize: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.quantize = quantize
        emb_std = 0.02
        self.tok_emb = rng.split().normal(cfg.vocab, cfg.d_model, std=emb_std)
        self.pos_emb = rng.split().normal(cfg.seq_len, cfg.d_model, std=emb_std)
        self.blocks = [Block(cfg, rng, quantize) for _ in range(cfg.n_layers)]
        if cfg.tied_head:
            self.head = None
        else:
            self.head = rng.split().normal(cfg.d_model, cfg.vocab, std=emb_std)
        self._cache: dict = {}
        self._grads: dict[str, np.ndarray] = {}

    # -- parameters -------------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb}
        if self.head is not None:
            out["head"] = self.head
        for i, block in enumerate(self.blocks):
            for name, layer in block.layers().items():
                if layer.latent is not None:
                    out[f"block{i}.{name}"] = layer.latent
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    # -- forward / backward -------------------------------------------------

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] < 2:
            raise ValueError("token batch must be 2-D with at least 2 tokens per row")
        if tokens.shape[1] > self.cfg.seq_len:
            raise ValueError(f"sequence of {tokens.shape[1]} exceeds seq_len={self.cfg.seq_len}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab:
            raise ValueError("token id out of vocabulary range")
        return tokens.astype(np.int64)

    def forward_lm(self, tokens: np.ndarray) -> tuple[np.ndarray, float]:
        """Next-token logits and mean cross-entropy (nats) for a token batch.

        Row layout: position t of the logits predicts token t+1 of the
        same row; the last token of each row is target-only.
        """
        tokens = self._check_tokens(tokens)
        batch, length = tokens.shape
        inputs = tokens[:, :-1]
        targets = tokens[:, 1:].reshape(-1)
        t_len = length - 1

        ids = inputs.reshape(-1)
        h = self.tok_emb[ids] + np.tile(self.pos_emb[:t_len], (batch, 1))
        h = check_matrix(h)
        for block in self.blocks:
            h = block.forward(h, batch, t_len)
        normed, _, denoms = group_layernorm_stats(h, groups=h.shape[0], eps=self.cfg.ln_eps)
        if self.head is None:
            logits = matmul_nt(normed, self.tok_emb)
        else:
            logits = matmul(normed, self.head)

        # cross entropy in float64: sampling-grade probabilities need the headroom
        l64 = logits.astype(np.float64)
        l64 -= l64.max(axis=1, keepdims=True)
        logz = np.log(np.exp(l64).sum(axis=1, keepdims=True))
        n_pred = targets.shape[0]
        loss = float(-(l64[np.arange(n_pred), targets] - logz[:, 0]).mean())

        probs = np.exp(l64 - logz)
        probs[np.arange(n_pred), targets] -= 1.0
        self._cache = {
            "ids": ids, "batch": batch, "t_len": t_len, "h_final": h,
            "normed": normed, "denoms": denoms, "dlogits": (probs / n_pred).astype(np.float32),
        }
        return logits, loss

    def backward_lm(self) -> dict[str, np.ndarray]:
        """Gradients for every parameter, from the last forward_lm call."""
        c = self._cache
        grads: dict[str, np.ndarray] = {}
        dlogits = c["dlogits"]
        if self.head is None:
            dnormed = matmul(dlogits, self.tok_emb)
            dtok_head = matmul_tn(dlogits, c["normed"])  # (vocab, d)
        else:
            dnormed = matmul_nt(dlogits, self.head)
            grads["head"] = matmul_tn(c["normed"], dlogits)
        dh = group_layernorm_backward(dnormed, c["normed"], c["denoms"], groups=c["normed"].shape[0])

        for i in reversed(range(len(self.blocks))):
            dh = self.blocks[i].backward(dh)
            for name, g in self.blocks[i]._grads.items():
                grads[f"block{i}.{name}"] = g

        dtok = np.zeros((self.cfg.vocab, self.cfg.d_model), dtype=np.float64)
        np.add.at(dtok, c["ids"], dh.astype(np.float64))
        if self.head is None:
            dtok += dtok_head.astype(np.float64)
        grads["tok_emb"] = dtok.astype(np.float32)
        grads["pos_emb"] = (
            dh.reshape(c["batch"], c["t_len"], self.cfg.d_model)
            .astype(np.float64).sum(axis=0)
        ).astype(np.float32)
        if grads["pos_emb"].shape[0] < self.cfg.seq_len:
            full = np.zeros_like(self.pos_emb)
            full[: grads["pos_emb"].shape[0]] = grads["pos_emb"]
            grads["pos_emb"] = full
        return grads


def build_model(cfg: ModelConfig, rng: Rng, quantize: bool = True) -> Model:
    """Construct a model; ``quantize=False`` builds the full-precision arm."""
    return Model(cfg, rng, quantize=quantize)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(model: Model) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in model.params().items()},
        v={k: np.zeros_like(p) for k, p in model.params().items()},
    )


def lr_at(step: int, tc: TrainConfig) -> float:
    """Linear warmup to peak_lr, then linear (polynomial power 1) decay to 0."""
    if step < tc.warmup_updates:
        return tc.peak_lr * step / tc.warmup_updates
    if step >= tc.total_updates:
        return 0.0
    return tc.peak_lr * (1 - (step - tc.warmup_updates) / (tc.total_updates - tc.warmup_updates))


def adam_apply(model: Model, grads: dict[str, np.ndarray], state: AdamState,
               lr: float, tc: TrainConfig) -> None:
    """One Adam step with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    b1, b2 = np.float32(tc.adam_beta1), np.float32(tc.adam_beta2)
    bc1 = np.float32(1.0 - tc.adam_beta1 ** t)
    bc2 = np.float32(1.0 - tc.adam_beta2 ** t)
    eps = np.float32(1e-8)
    lr32 = np.float32(lr)
    decay = np.float32(lr * tc.weight_decay)
    for name, p in model.params().items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m[:] = b1 * m + (np.float32(1.0) - b1) * g
        v[:] = b2 * v + (np.float32(1.0) - b2) * (g * g)
        p -= lr32 * ((m / bc1) / (np.sqrt(v / bc2) + eps))
        if tc.weight_decay:
            p -= decay * p


def train_step(model: Model, state: AdamState, batch: np.ndarray, step: int,
               tc: TrainConfig) -> float:
    """Forward, STE backward, Adam update. Raises DivergenceError on non-finite loss."""
    _, loss = model.forward_lm(batch)
    if not math.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss {loss} at step {step} (lr={lr_at(step, tc):.3g}, "
            f"peak_lr={tc.peak_lr:.3g}, seed={tc.seed})"
        )
    grads = model.backward_lm()
    adam_apply(model, grads, state, lr_at(step, tc), tc)
    return loss


# ---------------------------------------------------------------------------
# training loop and stability probe
# ---------------------------------------------------------------------------


@dataclass
class TrainLogRow:
    step: int
    lr: float
    loss: float
    tokens_seen: int


def sample_batch(tokens: np.ndarray, rng: Rng, batch: int, length: int) -> np.ndarray:
    """Random contiguous windows; offsets drawn from the run's own stream."""
    if tokens.shape[0] < length:
        raise ValueError(f"corpus of {tokens.shape[0]} tokens is shorter than a {length} window")
    offs = rng.integers(0, tokens.shape[0] - length + 1, size=batch)
    return np.stack([tokens[o : o + length] for o in offs])


def train_loop(
    model: Model,
    tc: TrainConfig,
    corpus: np.ndarray,
    steps: int | None = None,
    on_step=None,
    state: AdamState | None = None,
) -> list[TrainLogRow]:
    """Run ``steps`` updates (default: tc.total_updates); returns the log."""
    tc.validate()
    if state is None:
        state = init_adam(model)
    batch_rows = max(1, tc.batch_tokens // model.cfg.seq_len)
    sampler = Rng(tc.seed).split()
    rows: list[TrainLogRow] = []
    total = tc.total_updates if steps is None else steps
    seen = 0
    for step in range(total):
        batch = sample_batch(corpus, sampler, batch_rows, model.cfg.seq_len)
        loss = train_step(model, state, batch, step, tc)
        seen += batch.size
        rows.append(TrainLogRow(step=step, lr=lr_at(step, tc), loss=loss, tokens_seen=seen))
        if on_step is not None:
            on_step(rows[-1])
    return rows


@dataclass
class StabilityRecord:
    mode: str
    seed: int
    lr: float
    losses: list[float] = field(default_factory=list)
    diverged: bool = False


def stability_probe(
    cfg: ModelConfig,
    tc: TrainConfig,
    corpus: np.ndarray,
    lr_grid: list[float],
    steps: int,
    seeds: tuple[int, ...] = (0, 1, 2),
    modes: tuple[str, ...] = ("fp", "bitnet"),
) -> list[StabilityRecord]:
    """Train short runs over a peak-lr grid for both arms.

    Divergence is data, not an error: a run is flagged when its loss
    exceeds twice the initial loss or stops being finite.
    """
    records: list[StabilityRecord] = []
    for mode in modes:
        for seed in seeds:
            for lr in lr_grid:
                run_tc = replace(tc, peak_lr=lr, seed=seed,
                                 total_updates=max(steps, tc.warmup_updates + 1))
                model = build_model(cfg, Rng(seed).split(), quantize=(mode == "bitnet"))
                rec = StabilityRecord(mode=mode, seed=seed, lr=lr)
                try:
                    log = train_loop(model, run_tc, corpus, steps=steps)
                    rec.losses = [r.loss for r in log]
                    initial = rec.losses[0]
                    rec.diverged = any(
                        not math.isfinite(l) or l > 2 * initial for l in rec.losses
                    )
                except DivergenceError:
                    rec.diverged = True
                records.append(rec)
    return records


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def eval_perplexity(model: Model, tokens: np.ndarray) -> float:
    """exp(mean next-token loss) over the corpus.

    Windows of seq_len tokens with stride seq_len - 1, so every position
    except the first is predicted exactly once.
    """
    if tokens.shape[0] < 2:
        raise ValueError("corpus too short to evaluate")
    t_len = model.cfg.seq_len
    total_nll = 0.0
    total_pred = 0
    start = 0
    while start + 1 < tokens.shape[0]:
        window = tokens[start : start + t_len]
        if window.shape[0] < 2:
            break
        _, loss = model.forward_lm(window[None, :])
        n_pred = window.shape[0] - 1
        total_nll += loss * n_pred
        total_pred += n_pred
        start += t_len - 1
    return float(math.exp(total_nll / total_pred))
