"""Canonical double-gamma hemodynamic response kernel, sampled at the
repetition time and normalized to unit sum."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Canonical double-gamma constants: response gamma(6, 1), undershoot
# gamma(16, 1) scaled by 1/6.
_RESPONSE_SHAPE = 6.0
_RESPONSE_SCALE = 1.0
_UNDERSHOOT_SHAPE = 16.0
_UNDERSHOOT_SCALE = 1.0
_UNDERSHOOT_RATIO = 1.0 / 6.0


@dataclass(frozen=True)
class HrfKernel:
    tr_seconds: float
    length: int
    taps: np.ndarray  # (length,), float64, sums to 1

    def __post_init__(self):
        object.__setattr__(self, "taps", np.asarray(self.taps, dtype=np.float64))


def _gamma_density(t: np.ndarray, shape: float, scale: float) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    log_norm = shape * math.log(scale) + math.lgamma(shape)
    out[pos] = np.exp((shape - 1.0) * np.log(tp) - tp / scale - log_norm)
    return out


def double_gamma(t) -> np.ndarray:
    """The analytic double-gamma response evaluated at times ``t`` (seconds).
    Zero for t <= 0."""
    t = np.asarray(t, dtype=np.float64)
    return _gamma_density(t, _RESPONSE_SHAPE, _RESPONSE_SCALE) - _UNDERSHOOT_RATIO * (
        _gamma_density(t, _UNDERSHOOT_SHAPE, _UNDERSHOOT_SCALE)
    )


def hrf_kernel(tr_seconds: float, length: int) -> HrfKernel:
    """Sample the double-gamma response at grid times i * tr and normalize.

    taps[0] is exactly zero and the taps sum to one, so convolving a constant
    sequence eventually reproduces it. Spans shorter than 10 seconds truncate
    most of the response and trigger a warning.
    """
    if tr_seconds <= 0:
        raise ConfigError(f"hrf_kernel: tr_seconds must be positive, got {tr_seconds}")
    if length < 2:
        raise ConfigError(f"hrf_kernel: length must be >= 2, got {length}")
    if length * tr_seconds < 10.0:
        warnings.warn(
            f"HRF span {length * tr_seconds:.1f}s is shorter than 10s; "
            "the response is heavily truncated",
            stacklevel=2,
        )
    grid = np.arange(length, dtype=np.float64) * tr_seconds
    taps = double_gamma(grid)
    total = taps.sum()
    if total <= 0:
        raise ConfigError("hrf_kernel: sampled taps do not sum to a positive value")
    return HrfKernel(tr_seconds=float(tr_seconds), length=int(length), taps=taps / total)


def convolve_causal(signal: np.ndarray, kernel: HrfKernel) -> np.ndarray:
    """Causal convolution along axis 0 with zero-padded history:
    out[t] = sum_j taps[j] * signal[t - j]."""
    signal = np.asarray(signal, dtype=np.float64)
    flat = signal.reshape(signal.shape[0], -1)
    out = np.empty_like(flat)
    for d in range(flat.shape[1]):
        out[:, d] = np.convolve(flat[:, d], kernel.taps)[: flat.shape[0]]
    return out.reshape(signal.shape)
