"""Predictive cross-modal contrastive objective.

A masked-attention context network summarizes one modality's sequence up to
position t; a prediction head maps that context to a guess at the other
modality's feature at t + k. The guess is scored against the whole batch with
an InfoNCE term over temperature-scaled cosine similarities, in both modality
directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore, constant
from .encoders import attention_context, prediction_head
from .errors import ConfigError, ShapeError

FMRI_TO_VIDEO = "ctx_f2v"
VIDEO_TO_FMRI = "ctx_v2f"


@dataclass
class NtclConfig:
    temperature: float = 0.07
    offset: int = 2  # prediction distance k, in timesteps
    fmri_to_video: bool = True
    video_to_fmri: bool = True
    heads: int = 2

    def validate(self) -> "NtclConfig":
        if self.temperature <= 0:
            raise ConfigError("NtclConfig: temperature must be positive")
        if self.offset < 1:
            raise ConfigError("NtclConfig: offset must be >= 1")
        return self


def ntcl_loss(predictions, targets, cfg: NtclConfig) -> Node:
    """InfoNCE over one batch of (B, D) predictions against (B, D) targets.

    Row i's positive is target i; all rows, the positive included, form the
    denominator. Similarities are cosine, scaled by 1/temperature, and the
    log-sum-exp is computed in shifted form so large scores stay finite.
    """
    predictions = constant(predictions)
    targets = constant(targets)
    if predictions.ndim != 2 or targets.ndim != 2:
        raise ShapeError(
            f"ntcl_loss: expected (B, D) operands, got {predictions.shape} "
            f"and {targets.shape}"
        )
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"ntcl_loss: shapes differ, {predictions.shape} and {targets.shape}"
        )
    b = predictions.shape[0]
    if b == 0:
        raise ConfigError("ntcl_loss: empty batch")
    sims = ad.matmul(ad.l2_normalize(predictions), ad.transpose(ad.l2_normalize(targets)))
    logits = ad.mul(sims, 1.0 / cfg.temperature)
    lse = ad.logsumexp(logits, axis=1)
    idx = np.arange(b)
    positives = ad.take(logits, (idx, idx))
    return ad.reduce_mean(ad.sub(lse, positives))


def direction_loss(store: ParamStore, prefix: str, source_seq, target_seq,
                   cfg: NtclConfig) -> Node:
    """Mean InfoNCE over every valid anchor position for one direction.

    ``source_seq`` and ``target_seq`` are (B, T, D) nodes; anchors run over
    t = 0..T-k-1, predicting the target at t + k against in-batch negatives.
    """
    source_seq = constant(source_seq)
    target_seq = constant(target_seq)
    if source_seq.ndim != 3 or target_seq.ndim != 3:
        raise ShapeError(
            f"direction_loss: expected (B, T, D) sequences, got "
            f"{source_seq.shape} and {target_seq.shape}"
        )
    b, t, _ = source_seq.shape
    k = cfg.offset
    if t != target_seq.shape[1]:
        raise ShapeError(
            f"direction_loss: sequence lengths differ, {source_seq.shape} "
            f"and {target_seq.shape}"
        )
    if b == 0:
        raise ConfigError("direction_loss: empty batch")
    if t <= k:
        raise ConfigError(f"direction_loss: need T > offset, got T={t}, offset={k}")

    context, _ = attention_context(store, prefix, source_seq, cfg.heads)
    predictions = prediction_head(store, prefix, context)  # (B, T, D)
    pred = ad.take(predictions, (slice(None), slice(0, t - k)))
    tgt = ad.take(target_seq, (slice(None), slice(k, t)))

    pred_n = ad.transpose(ad.l2_normalize(pred), (1, 0, 2))  # (T-k, B, D)
    tgt_n = ad.transpose(ad.l2_normalize(tgt), (1, 2, 0))  # (T-k, D, B)
    logits = ad.mul(ad.matmul(pred_n, tgt_n), 1.0 / cfg.temperature)  # (T-k, B, B)
    lse = ad.logsumexp(logits, axis=2)
    idx = np.arange(b)
    positives = ad.take(logits, (slice(None), idx, idx))
    return ad.reduce_mean(ad.sub(lse, positives))


def ntcl_bidirectional(store: ParamStore, fmri_seq, video_seq, cfg: NtclConfig) -> Node:
    """Average of the enabled direction losses; separate context and head
    parameters per direction."""
    cfg.validate()
    losses = []
    if cfg.fmri_to_video:
        losses.append(direction_loss(store, FMRI_TO_VIDEO, fmri_seq, video_seq, cfg))
    if cfg.video_to_fmri:
        losses.append(direction_loss(store, VIDEO_TO_FMRI, video_seq, fmri_seq, cfg))
    if not losses:
        raise ConfigError("ntcl_bidirectional: both directions disabled")
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    return ad.mul(total, 1.0 / len(losses))
