"""Trainable encoders: per-frame perceptrons, a causal temporal adapter for
fMRI, multiscale dilated causal convolutions, and a masked attention context
network with a prediction head.

All builders take a ParamStore plus a name prefix and return graph nodes, so
one store can own every component and the optimizer sees a flat name space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore, constant
from .errors import ConfigError, ShapeError


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    scales: int = 3  # dilations 1, 2, 4, ...
    kernel_size: int = 3
    heads: int = 2
    ffn_dim: int = 64
    hrf_length: int = 16  # taps of the matching-loss kernel
    max_positions: int = 64

    def dilations(self) -> list[int]:
        return [2 ** l for l in range(self.scales)]

    def validate(self) -> "ModelConfig":
        if self.hidden_dim < 1 or self.hidden_dim % self.heads:
            raise ConfigError(
                f"ModelConfig: hidden_dim {self.hidden_dim} must be a positive "
                f"multiple of heads {self.heads}"
            )
        if self.scales < 1 or self.kernel_size < 1:
            raise ConfigError("ModelConfig: scales and kernel_size must be >= 1")
        return self


def _init(store: ParamStore, name: str, shape, rng: np.random.Generator, scale=None):
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    s = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    store.add(name, rng.normal(0.0, s, shape))


def init_mlp_params(store: ParamStore, prefix: str, d_in: int, d_hidden: int,
                    d_out: int, rng: np.random.Generator) -> None:
    _init(store, f"{prefix}/w1", (d_hidden, d_in), rng)
    store.add(f"{prefix}/b1", np.zeros(d_hidden))
    _init(store, f"{prefix}/w2", (d_out, d_hidden), rng)
    store.add(f"{prefix}/b2", np.zeros(d_out))


def mlp2(store: ParamStore, prefix: str, x) -> Node:
    """Two-layer perceptron with a tanh hidden layer, applied to the last axis."""
    x = constant(x)
    h = ad.tanh(ad.add(ad.matmul(x, ad.transpose(store.leaf(f"{prefix}/w1"))),
                       store.leaf(f"{prefix}/b1")))
    return ad.add(ad.matmul(h, ad.transpose(store.leaf(f"{prefix}/w2"))),
                  store.leaf(f"{prefix}/b2"))


def encode_video(store: ParamStore, video) -> Node:
    """Per-frame encoding of a (..., T_v, D_v) stack into (..., T_v, D_h)."""
    return mlp2(store, "video_enc", video)


def encode_text(store: ParamStore, caption) -> Node:
    """Caption vector(s) (..., D_c) into (..., D_h)."""
    return mlp2(store, "text_enc", caption)


def init_fmri_adapter_params(store: ParamStore, prefix: str, window: int,
                             d_in: int, d_out: int, rng: np.random.Generator) -> None:
    _init(store, f"{prefix}/weights", (window, d_out, d_in), rng)
    store.add(f"{prefix}/logits", np.zeros(window))


def fmri_temporal_adapt(store: ParamStore, prefix: str, window) -> Node:
    """Collapse one causal window (T', D_f) to a single (D_h,) feature:
    softmax-weighted sum of per-timestep linear maps."""
    window = constant(window)
    weights = store.leaf(f"{prefix}/weights")
    t_conf = weights.shape[0]
    if window.ndim != 2 or window.shape[0] != t_conf:
        raise ShapeError(
            f"fmri_temporal_adapt: window shape {window.shape} does not match "
            f"configured ({t_conf}, {weights.shape[2]})"
        )
    gate = ad.softmax(store.leaf(f"{prefix}/logits"), axis=-1)
    per_step = ad.einsum2("jhd,jd->jh", weights, window)
    return ad.einsum2("j,jh->h", gate, per_step)


def _causal_windows(x: np.ndarray, window: int) -> np.ndarray:
    """(B, T, D) to (B, T, window, D); win[b, s, j] = x[b, s - window + 1 + j],
    zero for negative time."""
    b, t, d = x.shape
    padded = np.concatenate([np.zeros((b, window - 1, d), dtype=x.dtype), x], axis=1)
    out = np.empty((b, t, window, d), dtype=np.float64)
    for j in range(window):
        out[:, :, j, :] = padded[:, j : j + t, :]
    return out


def fmri_adapt_sequence(store: ParamStore, prefix: str, fmri: np.ndarray) -> Node:
    """Sliding application of the temporal adapter over a raw (B, T, D_f)
    batch, producing causal (B, T, D_h) features. Position s sees the window
    ending at s with zero-padded history."""
    weights = store.leaf(f"{prefix}/weights")
    windows = constant(_causal_windows(np.asarray(fmri, dtype=np.float64),
                                       weights.shape[0]))
    gate = ad.softmax(store.leaf(f"{prefix}/logits"), axis=-1)
    per_step = ad.einsum2("jhd,bsjd->bsjh", weights, windows)
    return ad.einsum2("j,bsjh->bsh", gate, per_step)


def init_conv_stack_params(store: ParamStore, prefix: str, scales: int,
                           kernel_size: int, d_in: int, d_out: int,
                           rng: np.random.Generator) -> None:
    for l in range(scales):
        _init(store, f"{prefix}/conv{l}/taps", (kernel_size, d_out, d_in), rng)
    store.add(f"{prefix}/logits", np.zeros(scales))


def dilated_causal_conv(x, taps, dilation: int) -> Node:
    """y[t] = sum_j taps[j] @ x[t - j * dilation], zero-padded history.

    ``x`` is (..., T, D_in) and ``taps`` is (kernel, D_out, D_in); the
    receptive field is (kernel - 1) * dilation + 1.
    """
    x = constant(x)
    taps = constant(taps)
    if dilation < 1:
        raise ConfigError(f"dilated_causal_conv: dilation must be >= 1, got {dilation}")
    kernel = taps.shape[0]
    shifted = [ad.shift_time(x, j * dilation, axis=-2) for j in range(kernel)]
    stacked = ad.stack(shifted, axis=0)  # (kernel, ..., T, D_in)
    if x.ndim == 2:
        return ad.einsum2("kod,ktd->to", taps, stacked)
    if x.ndim == 3:
        return ad.einsum2("kod,kbtd->bto", taps, stacked)
    raise ShapeError(f"dilated_causal_conv: rank {x.ndim} input not supported")


def multiscale_features(
    store: ParamStore, prefix: str, x, dilations
) -> tuple[list[Node], Node, Node]:
    """All three views of the scale stack over a (..., T, D_h) sequence.

    Returns (per-scale temporal means, fused per-timestep sequence, fused
    embedding). The fused embedding is the temporal mean of the fused
    sequence, which equals the gated sum of the per-scale means because the
    gate does not depend on time.
    """
    x = constant(x)
    sequences = []
    for l, dilation in enumerate(dilations):
        taps = store.leaf(f"{prefix}/conv{l}/taps")
        sequences.append(dilated_causal_conv(x, taps, dilation))
    per_scale = [ad.reduce_mean(y, axis=-2) for y in sequences]
    gate = ad.softmax(store.leaf(f"{prefix}/logits"), axis=-1)
    stacked = ad.stack(sequences, axis=0)
    spec = "l,lth->th" if x.ndim == 2 else "l,lbth->bth"
    fused_seq = ad.einsum2(spec, gate, stacked)
    return per_scale, fused_seq, ad.reduce_mean(fused_seq, axis=-2)


def multiscale_aggregate(store: ParamStore, prefix: str, x, dilations) -> tuple[list[Node], Node]:
    """Per-scale temporal means plus their softmax-gated combination.

    Returns ([h_l for each scale], h_tilde); shapes (..., D_h) each.
    """
    per_scale, _, fused = multiscale_features(store, prefix, x, dilations)
    return per_scale, fused


def init_context_params(store: ParamStore, prefix: str, cfg: ModelConfig,
                        rng: np.random.Generator) -> None:
    d = cfg.hidden_dim
    for name in ("wq", "wk", "wv", "wo"):
        _init(store, f"{prefix}/{name}", (d, d), rng)
    store.add(f"{prefix}/pos", rng.normal(0.0, 0.1, (cfg.max_positions, d)))
    _init(store, f"{prefix}/ffn_w1", (cfg.ffn_dim, d), rng)
    store.add(f"{prefix}/ffn_b1", np.zeros(cfg.ffn_dim))
    _init(store, f"{prefix}/ffn_w2", (d, cfg.ffn_dim), rng)
    store.add(f"{prefix}/ffn_b2", np.zeros(d))
    init_mlp_params(store, f"{prefix}/head", d, cfg.ffn_dim, d, rng)


def attention_context(store: ParamStore, prefix: str, x, heads: int) -> tuple[Node, Node]:
    """One causally masked attention block over (B, T, D) plus positions and a
    feed-forward stage. Returns (context (B, T, D), attention weights
    (B, heads, T, T)); row t of the weights attends to positions <= t only."""
    x = constant(x)
    if x.ndim != 3:
        raise ShapeError(f"attention_context: expected (B, T, D), got {x.shape}")
    b, t, d = x.shape
    if d % heads:
        raise ConfigError(f"attention_context: width {d} not divisible by {heads} heads")
    pos_table = store.leaf(f"{prefix}/pos")
    if t > pos_table.shape[0]:
        raise ConfigError(
            f"attention_context: sequence length {t} exceeds positional table "
            f"{pos_table.shape[0]}"
        )
    dh = d // heads
    u = ad.add(x, ad.take(pos_table, (slice(0, t),)))

    def split_heads(z):
        return ad.transpose(ad.reshape(z, (b, t, heads, dh)), (0, 2, 1, 3))

    q = split_heads(ad.matmul(u, ad.transpose(store.leaf(f"{prefix}/wq"))))
    k = split_heads(ad.matmul(u, ad.transpose(store.leaf(f"{prefix}/wk"))))
    v = split_heads(ad.matmul(u, ad.transpose(store.leaf(f"{prefix}/wv"))))

    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    mask = np.triu(np.full((t, t), -1e30), k=1)  # strictly-future positions
    weights = ad.softmax(ad.add(scores, constant(mask)), axis=-1)
    mixed = ad.matmul(weights, v)
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, d))
    attended = ad.add(u, ad.matmul(merged, ad.transpose(store.leaf(f"{prefix}/wo"))))

    hidden = ad.tanh(ad.add(ad.matmul(attended, ad.transpose(store.leaf(f"{prefix}/ffn_w1"))),
                            store.leaf(f"{prefix}/ffn_b1")))
    ffn = ad.add(ad.matmul(hidden, ad.transpose(store.leaf(f"{prefix}/ffn_w2"))),
                 store.leaf(f"{prefix}/ffn_b2"))
    return ad.add(attended, ffn), weights


def prediction_head(store: ParamStore, prefix: str, context) -> Node:
    return mlp2(store, f"{prefix}/head", context)


def context_predict(store: ParamStore, prefix: str, h_seq, t: int, k: int,
                    heads: int) -> Node:
    """Predict the cross-modal feature at position t + k from h_seq[0..t].

    ``h_seq`` is (T, D); the causal mask guarantees the output depends on
    positions <= t only.
    """
    h_seq = constant(h_seq)
    if h_seq.ndim != 2:
        raise ShapeError(f"context_predict: expected (T, D), got {h_seq.shape}")
    t_len = h_seq.shape[0]
    if t < 0 or k < 1 or t + k >= t_len:
        raise IndexError(
            f"context_predict: position t={t}, offset k={k} out of range for T={t_len}"
        )
    seq3 = ad.reshape(h_seq, (1,) + tuple(h_seq.shape))
    context, _ = attention_context(store, prefix, seq3, heads)
    preds = prediction_head(store, prefix, context)
    return ad.take(preds, (0, t))
