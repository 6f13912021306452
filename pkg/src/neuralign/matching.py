"""Hemodynamics-aware matching losses.

The temporal term asks each quantized timestep to be predictable from the
HRF-filtered history of its own sequence; the structural term asks the
within-batch similarity geometry of fMRI and video features to agree at every
scale. Both are computed on graph nodes so gradients reach the encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, constant
from .errors import ConfigError, ShapeError
from .hrf import HrfKernel


@dataclass
class MatchConfig:
    beta_struct: float = 0.5
    include_text_structure: bool = False  # reserved; text has no time axis


def hrf_matrix(kernel: HrfKernel, t_len: int) -> np.ndarray:
    """Lower-triangular (T, T) operator M with M[t, t - j] = taps[j]; applying
    it to a sequence is the causal, zero-padded HRF convolution."""
    m = np.zeros((t_len, t_len))
    for j in range(min(kernel.length, t_len)):
        idx = np.arange(j, t_len)
        m[idx, idx - j] = kernel.taps[j]
    return m


def hrf_operator(z, kernel: HrfKernel) -> Node:
    """HRF-filter a (..., T, D) sequence along its time axis. Linear, so it is
    exactly the matmul with the banded convolution matrix."""
    z = constant(z)
    if z.ndim < 2:
        raise ShapeError(f"hrf_operator: expected (..., T, D), got {z.shape}")
    t_len = z.shape[-2]
    return ad.matmul(constant(hrf_matrix(kernel, t_len)), z)


def temporal_loss(z_seqs: list, kernel: HrfKernel) -> Node:
    """Mean over timesteps t >= 1 (and over modalities and batch rows) of
    |z_t - filtered_{t-1}|^2, where filtered is the HRF-filtered sequence."""
    if not z_seqs:
        raise ConfigError("temporal_loss: no sequences given")
    per_modality = []
    for z in z_seqs:
        z = constant(z)
        t_len = z.shape[-2]
        if t_len < 2:
            raise ConfigError(f"temporal_loss: need T >= 2, got T={t_len}")
        filtered = hrf_operator(z, kernel)
        current = ad.take(z, (Ellipsis, slice(1, t_len), slice(None)))
        history = ad.take(filtered, (Ellipsis, slice(0, t_len - 1), slice(None)))
        gap = ad.reduce_sum(ad.square(ad.sub(current, history)), axis=-1)
        per_modality.append(ad.reduce_mean(gap))
    total = per_modality[0]
    for extra in per_modality[1:]:
        total = ad.add(total, extra)
    return ad.mul(total, 1.0 / len(per_modality))


def _cosine_matrix(rows: Node) -> Node:
    n = ad.l2_normalize(rows)
    return ad.matmul(n, ad.transpose(n))


def structural_loss(fmri_scales: list, video_scales: list) -> Node:
    """Mean squared off-diagonal gap between the per-scale within-modality
    cosine similarity matrices of fMRI and video batch features."""
    if len(fmri_scales) != len(video_scales) or not fmri_scales:
        raise ConfigError(
            f"structural_loss: scale counts differ, {len(fmri_scales)} vs "
            f"{len(video_scales)}"
        )
    per_scale = []
    for f, v in zip(fmri_scales, video_scales):
        f, v = constant(f), constant(v)
        if f.ndim != 2 or v.ndim != 2 or f.shape[0] != v.shape[0]:
            raise ShapeError(
                f"structural_loss: expected aligned (B, D) features, got "
                f"{f.shape} and {v.shape}"
            )
        b = f.shape[0]
        if b < 2:
            raise ConfigError(f"structural_loss: need batch >= 2, got {b}")
        gap = ad.square(ad.sub(_cosine_matrix(f), _cosine_matrix(v)))
        off = constant(1.0 - np.eye(b))
        per_scale.append(
            ad.mul(ad.reduce_sum(ad.mul(gap, off)), 1.0 / (b * (b - 1)))
        )
    total = per_scale[0]
    for extra in per_scale[1:]:
        total = ad.add(total, extra)
    return ad.mul(total, 1.0 / len(per_scale))


def match_loss(temporal: Node, structural: Node, cfg: MatchConfig) -> Node:
    """temporal + beta_struct * structural."""
    return ad.add(temporal, ad.mul(structural, cfg.beta_struct))
