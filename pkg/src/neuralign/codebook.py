"""Shared vector-quantization codebook with synchronized multi-modal EMA
updates.

All modalities quantize against one codebook. Each training step turns the
batch's assignments into per-modality sufficient statistics (counts and
mixed-feature sums), weights the fMRI statistics by a variance ratio, sums the
statistics across modalities, and applies exactly one EMA step. Summation
before the EMA step is what makes the update independent of modality order;
the sequential variant below exists to demonstrate the bias it removes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, constant
from .errors import ConfigError, ShapeError

MODALITIES = ("fmri", "video", "text")
COUNT_EPS = 1e-8  # guard for entry refresh


@dataclass
class CodebookConfig:
    size: int = 64
    decay: float = 0.99  # EMA retention
    self_mix: float = 0.8  # own-modality weight in the mixed feature targets
    var_eps: float = 1e-5  # variance guard for the fMRI weighting
    commit_weight: float = 0.25
    reseed_dead: bool = True
    dead_threshold: float = 1e-3
    dead_patience: int = 50

    def validate(self) -> "CodebookConfig":
        if self.size < 1:
            raise ConfigError("CodebookConfig: size must be >= 1")
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError("CodebookConfig: decay must be in [0, 1)")
        if not 0.0 <= self.self_mix <= 1.0:
            raise ConfigError("CodebookConfig: self_mix must be in [0, 1]")
        return self


@dataclass
class Codebook:
    entries: np.ndarray  # (K, D)
    ema_counts: np.ndarray  # (K,)
    ema_sums: np.ndarray  # (K, D)
    cfg: CodebookConfig
    dead_steps: np.ndarray = field(default=None)  # (K,) int64 consecutive-dead counter

    def __post_init__(self):
        if self.dead_steps is None:
            self.dead_steps = np.zeros(self.entries.shape[0], dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def new_codebook(cfg: CodebookConfig, dim: int, rng: np.random.Generator) -> Codebook:
    cfg.validate()
    k = cfg.size
    entries = rng.uniform(-1.0 / k, 1.0 / k, (k, dim))
    return Codebook(
        entries=entries,
        ema_counts=np.zeros(k),
        ema_sums=np.zeros((k, dim)),
        cfg=cfg,
    )


@dataclass
class Assignment:
    indices: np.ndarray  # (B,) int64
    one_hot: np.ndarray  # (B, K)
    quantized: np.ndarray  # (B, D) rows of the codebook


def quantize(features: np.ndarray, book: Codebook) -> Assignment:
    """Nearest codebook entry per row by squared Euclidean distance; exact
    ties resolve to the smallest index. Distances use direct differences so
    symmetric inputs tie exactly."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"quantize: expected (B, D) features, got {features.shape}")
    if features.shape[1] != book.dim:
        raise ShapeError(
            f"quantize: feature width {features.shape[1]} does not match "
            f"codebook width {book.dim}"
        )
    diff = features[:, None, :] - book.entries[None, :, :]
    d2 = np.einsum("bkd,bkd->bk", diff, diff)
    indices = np.argmin(d2, axis=1)
    one_hot = np.zeros((features.shape[0], book.size))
    one_hot[np.arange(features.shape[0]), indices] = 1.0
    return Assignment(
        indices=indices.astype(np.int64),
        one_hot=one_hot,
        quantized=book.entries[indices].copy(),
    )


def straight_through(features: Node, assignment: Assignment) -> Node:
    """Forward the quantized rows; pass the downstream gradient to the
    pre-quantization features unchanged. Codebook entries receive nothing."""
    if features.shape != assignment.quantized.shape:
        raise ShapeError(
            f"straight_through: features {features.shape} do not match "
            f"quantized {assignment.quantized.shape}"
        )
    return Node(assignment.quantized, (features,), (lambda g: g,))


def variance_weight(var_fmri: float, var_videotext: float, eps: float = 1e-5) -> float:
    """Weight in (0, 2) boosting fMRI statistics when the other modalities
    carry more variance: 1 + tanh(log(ratio))."""
    return float(1.0 + np.tanh(np.log((var_videotext + eps) / (var_fmri + eps))))


def batch_variances(features: dict[str, np.ndarray]) -> tuple[float, float]:
    """Mean per-dimension variance of the fMRI rows and of the pooled
    video+text rows."""
    var_f = float(np.var(features["fmri"], axis=0).mean())
    pooled = np.concatenate([features["video"], features["text"]], axis=0)
    var_vt = float(np.var(pooled, axis=0).mean())
    return var_f, var_vt


def sufficient_stats(
    assignments: dict[str, Assignment],
    features: dict[str, np.ndarray],
    fmri_weight: float,
    self_mix: float,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-modality EMA statistics from one aligned batch.

    For modality a: counts N_a = w_a * sum of one-hots, sums
    W_a = w_a * E_a^T (self_mix * h_a + (1 - self_mix)/2 * sum of the other
    modalities' rows), with w_a = fmri_weight for fMRI and 1 otherwise.
    Rows must be aligned by pair across modalities.
    """
    keys = [m for m in MODALITIES if m in assignments]
    if set(assignments) != set(features) or not keys:
        raise ConfigError("sufficient_stats: assignments and features must cover "
                          "the same modalities")
    rows = {m: np.asarray(features[m], dtype=np.float64) for m in keys}
    b = rows[keys[0]].shape[0]
    for m in keys:
        if rows[m].shape[0] != b or assignments[m].one_hot.shape[0] != b:
            raise ShapeError(
                f"sufficient_stats: modality {m!r} has {rows[m].shape[0]} rows, "
                f"expected {b} (batch must be aligned by pair)"
            )
    cross = (1.0 - self_mix) / 2.0
    out = {}
    for m in keys:
        weight = fmri_weight if m == "fmri" else 1.0
        mixed = self_mix * rows[m]
        for other in keys:
            if other != m:
                mixed = mixed + cross * rows[other]
        counts = weight * assignments[m].one_hot.sum(axis=0)
        sums = weight * (assignments[m].one_hot.T @ mixed)
        out[m] = (counts, sums)
    return out


def ema_update(book: Codebook, stats: dict[str, tuple[np.ndarray, np.ndarray]]) -> Codebook:
    """One synchronized EMA step: statistics are summed across modalities in a
    fixed canonical order, then folded in with a single decay application, so
    the result is bit-identical under any modality permutation."""
    batch_counts = np.zeros_like(book.ema_counts)
    batch_sums = np.zeros_like(book.ema_sums)
    for m in MODALITIES:
        if m in stats:
            counts, sums = stats[m]
            batch_counts = batch_counts + counts
            batch_sums = batch_sums + sums
    _fold(book, batch_counts, batch_sums)
    return book


def ema_update_sequential(
    book: Codebook,
    stats: dict[str, tuple[np.ndarray, np.ndarray]],
    order: tuple[str, ...],
) -> Codebook:
    """Biased baseline: one EMA step per modality in the given order. Later
    modalities see less-decayed statistics, so the result depends on the
    order; kept for the ablation study."""
    for m in order:
        counts, sums = stats[m]
        _fold(book, counts, sums)
    return book


def _fold(book: Codebook, batch_counts: np.ndarray, batch_sums: np.ndarray) -> None:
    g = book.cfg.decay
    book.ema_counts = g * book.ema_counts + (1.0 - g) * batch_counts
    book.ema_sums = g * book.ema_sums + (1.0 - g) * batch_sums
    touched = batch_counts > 0
    refreshed = book.ema_sums[touched] / np.maximum(
        book.ema_counts[touched], COUNT_EPS
    )[:, None]
    book.entries = book.entries.copy()
    book.entries[touched] = refreshed


def track_dead_codes(book: Codebook) -> None:
    """Advance the consecutive-dead counters after an update."""
    dead = book.ema_counts < book.cfg.dead_threshold
    book.dead_steps = np.where(dead, book.dead_steps + 1, 0).astype(np.int64)


def reseed_dead_codes(book: Codebook, pool: np.ndarray, rng: np.random.Generator) -> list[int]:
    """Replace codes dead for ``dead_patience`` consecutive steps with random
    rows from ``pool`` (the batch's pre-quantization features). Reseeded codes
    get unit count so the entry identity e = W / max(N, eps) still holds."""
    if not book.cfg.reseed_dead:
        return []
    stale = np.flatnonzero(book.dead_steps >= book.cfg.dead_patience)
    if stale.size == 0:
        return []
    picks = rng.integers(0, pool.shape[0], size=stale.size)
    for code, pick in zip(stale, picks):
        feature = np.asarray(pool[pick], dtype=np.float64)
        book.entries[code] = feature
        book.ema_counts[code] = 1.0
        book.ema_sums[code] = feature
        book.dead_steps[code] = 0
    return [int(c) for c in stale]


def commitment_pair_loss(features: Node, own_quantized, cross_quantized,
                         weight: float) -> Node:
    """weight * mean_rows |phi - sg(e_own)|^2 + (weight/2) * mean_rows
    |phi - sg(e_cross)|^2. Quantized operands are wrapped in stop_gradient, so
    only the features receive gradient."""
    own = ad.stop_gradient(constant(own_quantized))
    cross = ad.stop_gradient(constant(cross_quantized))
    own_term = ad.reduce_mean(ad.reduce_sum(ad.square(ad.sub(features, own)), axis=-1))
    cross_term = ad.reduce_mean(ad.reduce_sum(ad.square(ad.sub(features, cross)), axis=-1))
    return ad.add(ad.mul(own_term, weight), ad.mul(cross_term, weight / 2.0))


def commitment_loss(features: dict[str, Node], quantized: dict[str, np.ndarray],
                    weight: float) -> Node:
    """Mean of commitment_pair_loss over all ordered modality pairs (a, b),
    a != b, among the provided modalities."""
    keys = [m for m in MODALITIES if m in features]
    if set(features) != set(quantized) or len(keys) < 2:
        raise ConfigError("commitment_loss: need matching features/quantized "
                          "for at least two modalities")
    pairs = [(a, b) for a in keys for b in keys if a != b]
    total = None
    for a, b in pairs:
        term = commitment_pair_loss(features[a], quantized[a], quantized[b], weight)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / len(pairs))


def codebook_stats(indices: np.ndarray, size: int) -> tuple[float, float]:
    """(usage fraction, perplexity) of one batch of assignments."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ConfigError("codebook_stats: no assignments")
    counts = np.bincount(indices.reshape(-1), minlength=size).astype(np.float64)
    p = counts / counts.sum()
    nonzero = p > 0
    entropy = -np.sum(p[nonzero] * np.log(p[nonzero]))
    usage = float(np.count_nonzero(counts)) / size
    return usage, float(np.exp(entropy))
