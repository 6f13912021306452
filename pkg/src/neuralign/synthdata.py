"""Synthetic tri-modal triplets driven by one latent process per pair.

Each sample owns a latent Gaussian random walk smoothed with a 3-tap moving
average. Video frames are a linear projection of the latent, the caption is a
projection of the clip-mean latent, and the fMRI sequence is a projection of
the HRF-convolved latent shifted back by the hemodynamic delay, plus noise.
All three share the pair identity through that latent, which is what the
alignment model is asked to recover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import TripletSample
from .errors import ConfigError
from .hrf import HrfKernel, convolve_causal, hrf_kernel

_SMALL_NOISE = 0.05  # video/caption observation noise, fixed
_HRF_SPAN_SECONDS = 32.0


@dataclass
class SynthConfig:
    n_train: int = 512
    n_test: int = 128
    latent_dim: int = 16
    t_video: int = 12
    t_fmri: int = 12
    tr_seconds: float = 1.0
    delay_seconds: float = 6.0
    noise_sigma: float = 0.3
    seed: int = 42
    dim_fmri: int = 24
    dim_video: int = 20
    dim_caption: int = 16

    def validate(self) -> "SynthConfig":
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ConfigError("SynthConfig: need a positive number of samples")
        for name in ("latent_dim", "t_video", "t_fmri", "dim_fmri", "dim_video", "dim_caption"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SynthConfig: {name} must be >= 1")
        if self.tr_seconds <= 0:
            raise ConfigError("SynthConfig: tr_seconds must be positive")
        if self.delay_seconds < 0:
            raise ConfigError("SynthConfig: delay_seconds must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("SynthConfig: noise_sigma must be >= 0")
        return self


@dataclass
class Projections:
    fmri: np.ndarray  # (dim_fmri, latent_dim)
    video: np.ndarray  # (dim_video, latent_dim)
    caption: np.ndarray  # (dim_caption, latent_dim)


def delay_steps(cfg: SynthConfig) -> int:
    return int(round(cfg.delay_seconds / cfg.tr_seconds))


def generation_kernel(cfg: SynthConfig) -> HrfKernel:
    length = max(2, int(math.ceil(_HRF_SPAN_SECONDS / cfg.tr_seconds)))
    return hrf_kernel(cfg.tr_seconds, length)


def _seed_roots(cfg: SynthConfig):
    root = np.random.SeedSequence(cfg.seed)
    proj_ss, sample_root = root.spawn(2)
    return proj_ss, sample_root


def _sample_children(cfg: SynthConfig):
    _, sample_root = _seed_roots(cfg)
    return sample_root.spawn(cfg.n_train + cfg.n_test)


def default_projections(cfg: SynthConfig) -> Projections:
    proj_ss, _ = _seed_roots(cfg)
    rng = np.random.default_rng(proj_ss)
    scale = 1.0 / math.sqrt(cfg.latent_dim)
    return Projections(
        fmri=rng.normal(0.0, scale, (cfg.dim_fmri, cfg.latent_dim)),
        video=rng.normal(0.0, scale, (cfg.dim_video, cfg.latent_dim)),
        caption=rng.normal(0.0, scale, (cfg.dim_caption, cfg.latent_dim)),
    )


def _padding(cfg: SynthConfig, kernel: HrfKernel) -> int:
    # history long enough for the causal convolution and the delay shift
    return delay_steps(cfg) + kernel.length


def _latent_from_rng(cfg: SynthConfig, rng: np.random.Generator, kernel: HrfKernel) -> np.ndarray:
    steps = _padding(cfg, kernel) + max(cfg.t_video, cfg.t_fmri)
    walk = np.cumsum(rng.normal(0.0, 1.0, (steps, cfg.latent_dim)), axis=0)
    smooth = np.empty_like(walk)
    box = np.full(3, 1.0 / 3.0)
    for d in range(cfg.latent_dim):
        smooth[:, d] = np.convolve(walk[:, d], box, mode="same")
    return smooth


def sample_latent(cfg: SynthConfig, pair_id: int) -> np.ndarray:
    """The extended-timeline latent for one pair, float64. Index pad + t is
    stimulus time t of the clip window."""
    n_total = cfg.n_train + cfg.n_test
    if not 0 <= pair_id < n_total:
        raise ConfigError(f"pair_id {pair_id} outside [0, {n_total})")
    child = _sample_children(cfg)[pair_id]
    return _latent_from_rng(cfg, np.random.default_rng(child), generation_kernel(cfg))


def _clean_fmri(cfg: SynthConfig, latent: np.ndarray, proj: Projections, kernel: HrfKernel) -> np.ndarray:
    conv = convolve_causal(latent, kernel)
    start = _padding(cfg, kernel) - delay_steps(cfg)
    window = conv[start : start + cfg.t_fmri]
    return window @ proj.fmri.T


def clean_fmri_signal(cfg: SynthConfig, pair_id: int, proj: Projections) -> np.ndarray:
    """Noise-free fMRI component: projected, HRF-convolved, delay-shifted latent."""
    return _clean_fmri(cfg, sample_latent(cfg, pair_id), proj, generation_kernel(cfg))


def generate_sample(cfg: SynthConfig, pair_id: int, proj: Projections, child=None) -> TripletSample:
    if child is None:
        child = _sample_children(cfg)[pair_id]
    rng = np.random.default_rng(child)
    kernel = generation_kernel(cfg)
    latent = _latent_from_rng(cfg, rng, kernel)
    video_noise = rng.normal(0.0, 1.0, (cfg.t_video, cfg.dim_video))
    fmri_noise = rng.normal(0.0, 1.0, (cfg.t_fmri, cfg.dim_fmri))
    caption_noise = rng.normal(0.0, 1.0, (cfg.dim_caption,))

    pad = _padding(cfg, kernel)
    clip = latent[pad : pad + cfg.t_video]
    video = clip @ proj.video.T + _SMALL_NOISE * video_noise
    caption = proj.caption @ clip.mean(axis=0) + _SMALL_NOISE * caption_noise
    fmri = _clean_fmri(cfg, latent, proj, kernel) + cfg.noise_sigma * fmri_noise

    return TripletSample(
        pair_id=pair_id,
        split="train" if pair_id < cfg.n_train else "test",
        fmri=fmri.astype(np.float32),
        video=video.astype(np.float32),
        caption=caption.astype(np.float32),
    )


def generate_dataset(cfg: SynthConfig, projections: Projections | None = None) -> list[TripletSample]:
    """All train then test samples, pair_id 0..n-1, deterministic in cfg.seed.

    ``projections`` overrides the seeded random projections; tests use it to
    pin degenerate cases such as an identity fMRI projection.
    """
    cfg.validate()
    proj = projections if projections is not None else default_projections(cfg)
    if proj.fmri.shape != (cfg.dim_fmri, cfg.latent_dim):
        raise ConfigError(
            f"projections.fmri shape {proj.fmri.shape} does not match "
            f"({cfg.dim_fmri}, {cfg.latent_dim})"
        )
    children = _sample_children(cfg)
    return [
        generate_sample(cfg, i, proj, child=children[i])
        for i in range(cfg.n_train + cfg.n_test)
    ]


def manifest_fields(cfg: SynthConfig) -> dict:
    return {f"synth.{k}": v for k, v in vars(cfg).items()}


def pre_shift_fmri(samples: list[TripletSample], steps: int) -> list[TripletSample]:
    """Undo the hemodynamic delay by shifting fMRI left ``steps`` timesteps.

    Both fMRI and video are truncated to the overlapping window so paired
    sequences stay index-aligned; captions are untouched.
    """
    if steps < 0:
        raise ConfigError(f"pre_shift_fmri: steps must be >= 0, got {steps}")
    if steps == 0:
        return samples
    out = []
    for s in samples:
        t_f = s.fmri.shape[0]
        if steps >= t_f:
            raise ConfigError(
                f"pre_shift_fmri: shift {steps} consumes the whole fMRI window ({t_f})"
            )
        keep = min(t_f - steps, s.video.shape[0])
        if keep < 2:
            raise ConfigError("pre_shift_fmri: fewer than 2 overlapping timesteps left")
        out.append(
            TripletSample(
                pair_id=s.pair_id,
                split=s.split,
                fmri=s.fmri[steps : steps + keep],
                video=s.video[:keep],
                caption=s.caption,
            )
        )
    return out
