"""Training loop: weighted total loss, Adam with cosine-annealed steps, one
synchronized codebook EMA update per step, deterministic batching, and
bit-exact checkpoint resume.

All randomness is counter-based: epoch shuffles and dead-code reseeds derive
from SeedSequence([seed, tag, counter]), so the serialized random state is
just the seed and the step counter.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore
from .codebook import (
    MODALITIES,
    Assignment,
    Codebook,
    CodebookConfig,
    batch_variances,
    codebook_stats,
    commitment_loss,
    ema_update,
    ema_update_sequential,
    new_codebook,
    quantize,
    reseed_dead_codes,
    straight_through,
    sufficient_stats,
    track_dead_codes,
    variance_weight,
)
from .dataio import TripletSample, read_tensor_map, write_tensor_map
from .encoders import (
    ModelConfig,
    encode_text,
    encode_video,
    fmri_adapt_sequence,
    init_conv_stack_params,
    init_context_params,
    init_fmri_adapter_params,
    init_mlp_params,
    multiscale_features,
)
from .errors import ConfigError, NonFiniteLossError, ShapeError
from .hrf import HrfKernel, hrf_kernel
from .matching import MatchConfig, match_loss, structural_loss, temporal_loss
from .ntcl import FMRI_TO_VIDEO, VIDEO_TO_FMRI, NtclConfig, ntcl_bidirectional

METRIC_COLUMNS = ("step", "lr", "total", "ntcl", "match", "commit", "perplexity", "usage")


@dataclass
class TrainConfig:
    alpha_ntcl: float = 0.5
    alpha_match: float = 0.3
    alpha_commit: float = 0.2
    batch_size: int = 32
    lr_max: float = 3e-5
    lr_min: float = 1e-6
    total_steps: int = 2000
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic evaluation callbacks
    checkpoint_path: str = "checkpoint.nalignck"
    pre_shift_hrf: bool = False
    ablate_ntcl: bool = False
    ablate_matching: bool = False
    sequential_ema: bool = False

    def validate(self) -> "TrainConfig":
        if min(self.alpha_ntcl, self.alpha_match, self.alpha_commit) < 0:
            raise ConfigError("TrainConfig: loss weights must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("TrainConfig: batch_size must be >= 2")
        if self.total_steps < 1:
            raise ConfigError("TrainConfig: total_steps must be >= 1")
        if self.lr_max < self.lr_min:
            raise ConfigError("TrainConfig: lr_max must be >= lr_min")
        return self


@dataclass
class DataDims:
    t_fmri: int
    t_video: int
    dim_fmri: int
    dim_video: int
    dim_caption: int
    tr_seconds: float


def dims_from_samples(samples: list[TripletSample], tr_seconds: float) -> DataDims:
    if not samples:
        raise ConfigError("dims_from_samples: empty sample list")
    s = samples[0]
    return DataDims(
        t_fmri=s.fmri.shape[0],
        t_video=s.video.shape[0],
        dim_fmri=s.fmri.shape[1],
        dim_video=s.video.shape[1],
        dim_caption=s.caption.shape[0],
        tr_seconds=float(tr_seconds),
    )


@dataclass
class TrainState:
    step: int
    store: ParamStore
    book: Codebook
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    model: ModelConfig
    train: TrainConfig
    ntcl: NtclConfig
    match: MatchConfig
    dims: DataDims
    hrf: HrfKernel


def init_state(
    dims: DataDims,
    model: ModelConfig,
    train: TrainConfig,
    ntcl: NtclConfig,
    match: MatchConfig,
    book_cfg: CodebookConfig,
) -> TrainState:
    model.validate()
    train.validate()
    ntcl.validate()
    if max(dims.t_fmri, dims.t_video) > model.max_positions:
        raise ConfigError(
            f"init_state: sequence length {max(dims.t_fmri, dims.t_video)} exceeds "
            f"max_positions {model.max_positions}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([train.seed, 0]))
    store = ParamStore()
    d = model.hidden_dim
    init_mlp_params(store, "video_enc", dims.dim_video, d, d, rng)
    init_mlp_params(store, "text_enc", dims.dim_caption, d, d, rng)
    init_fmri_adapter_params(store, "fmri_adapt", dims.t_fmri, dims.dim_fmri, d, rng)
    init_conv_stack_params(store, "fmri_scales", model.scales, model.kernel_size, d, d, rng)
    init_conv_stack_params(store, "video_scales", model.scales, model.kernel_size, d, d, rng)
    init_context_params(store, FMRI_TO_VIDEO, model, rng)
    init_context_params(store, VIDEO_TO_FMRI, model, rng)
    book = new_codebook(book_cfg, d, rng)
    return TrainState(
        step=0,
        store=store,
        book=book,
        adam_m={name: np.zeros_like(store.value(name)) for name in store.names()},
        adam_v={name: np.zeros_like(store.value(name)) for name in store.names()},
        model=model,
        train=train,
        ntcl=ntcl,
        match=match,
        dims=dims,
        hrf=hrf_kernel(dims.tr_seconds, model.hrf_length),
    )


def assemble_batch(samples: list[TripletSample]) -> dict[str, np.ndarray]:
    return {
        "fmri": np.stack([s.fmri for s in samples]).astype(np.float64),
        "video": np.stack([s.video for s in samples]).astype(np.float64),
        "caption": np.stack([s.caption for s in samples]).astype(np.float64),
    }


def encode_batch(state: TrainState, batch: dict[str, np.ndarray]) -> dict:
    """All encoder outputs for one aligned batch, as graph nodes.

    The per-timestep sequences handed to the contrastive and temporal losses
    are the fused multiscale features whose temporal mean is the per-sample
    embedding, so sequence-level alignment transfers to retrieval.
    """
    store = state.store
    dilations = state.model.dilations()
    fmri_enc = fmri_adapt_sequence(store, "fmri_adapt", batch["fmri"])
    video_enc = encode_video(store, batch["video"])
    text_vec = encode_text(store, batch["caption"])
    f_scales, f_seq, f_agg = multiscale_features(store, "fmri_scales", fmri_enc, dilations)
    v_scales, v_seq, v_agg = multiscale_features(store, "video_scales", video_enc, dilations)
    return {
        "fmri_seq": f_seq,
        "video_seq": v_seq,
        "fmri_scales": f_scales,
        "video_scales": v_scales,
        "embeddings": {"fmri": f_agg, "video": v_agg, "text": text_vec},
    }


def _quantize_sequence(
    seq: Node, book: Codebook, st_offsets: dict | None = None, key: str = ""
) -> Node:
    b, t, d = seq.shape
    flat = ad.reshape(seq, (b * t, d))
    if st_offsets is None:
        assignment = quantize(flat.value, book)
        return ad.reshape(straight_through(flat, assignment), (b, t, d))
    # finite-difference harness: freeze the quantization offset captured at
    # the first call so the straight-through surrogate phi + sg(q - phi)
    # stays a differentiable function of phi across probe points
    if key not in st_offsets:
        assignment = quantize(flat.value, book)
        st_offsets[key] = assignment.quantized - flat.value
    frozen = ad.add(flat, ad.constant(st_offsets[key]))
    return ad.reshape(frozen, (b, t, d))


def total_loss(
    state: TrainState, batch: dict[str, np.ndarray], st_offsets: dict | None = None
):
    """Weighted sum of the enabled components.

    Returns (total node, components dict of raw floats, aux) where aux carries
    the per-sample assignments and feature values the EMA update needs.
    ``st_offsets`` is only for gradient verification; see _quantize_sequence.
    """
    cfg = state.train
    enc = encode_batch(state, batch)
    embeddings = enc["embeddings"]
    features = {m: embeddings[m].value for m in MODALITIES}
    assignments = {m: quantize(features[m], state.book) for m in MODALITIES}

    parts: list[Node] = []
    components = {"ntcl": 0.0, "match": 0.0, "commit": 0.0}

    if not cfg.ablate_ntcl:
        ntcl_node = ntcl_bidirectional(state.store, enc["fmri_seq"], enc["video_seq"], state.ntcl)
        components["ntcl"] = ntcl_node.item()
        parts.append(ad.mul(ntcl_node, cfg.alpha_ntcl))

    if not cfg.ablate_matching:
        z_f = _quantize_sequence(enc["fmri_seq"], state.book, st_offsets, "fmri")
        z_v = _quantize_sequence(enc["video_seq"], state.book, st_offsets, "video")
        temporal = temporal_loss([z_f, z_v], state.hrf)
        structural = structural_loss(enc["fmri_scales"], enc["video_scales"])
        match_node = match_loss(temporal, structural, state.match)
        components["match"] = match_node.item()
        parts.append(ad.mul(match_node, cfg.alpha_match))

    commit_node = commitment_loss(
        embeddings, {m: assignments[m].quantized for m in MODALITIES},
        state.book.cfg.commit_weight,
    )
    components["commit"] = commit_node.item()
    parts.append(ad.mul(commit_node, cfg.alpha_commit))

    total = parts[0]
    for extra in parts[1:]:
        total = ad.add(total, extra)
    components["total"] = total.item()
    aux = {"assignments": assignments, "features": features}
    return total, components, aux


def lr_at(cfg: TrainConfig, step: int) -> float:
    cos = math.cos(math.pi * step / cfg.total_steps)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + cos)


def _reseed_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 7, step]))


def train_step(state: TrainState, batch: dict[str, np.ndarray]) -> dict[str, float]:
    """One optimization step plus exactly one codebook EMA update. Mutates and
    returns metrics for the step just taken."""
    cfg = state.train
    lr = lr_at(cfg, state.step)
    total, components, aux = total_loss(state, batch)
    for name in ("ntcl", "match", "commit", "total"):
        if not math.isfinite(components[name]):
            raise NonFiniteLossError(name, components[name])

    ad.forward_backward(total, state.store)
    t = state.step + 1
    b1, b2, eps = 0.9, 0.999, 1e-8
    for name in state.store.names():
        g = state.store.grad(name)
        state.adam_m[name] = b1 * state.adam_m[name] + (1.0 - b1) * g
        state.adam_v[name] = b2 * state.adam_v[name] + (1.0 - b2) * g * g
        m_hat = state.adam_m[name] / (1.0 - b1 ** t)
        v_hat = state.adam_v[name] / (1.0 - b2 ** t)
        state.store.set_value(
            name, state.store.value(name) - lr * m_hat / (np.sqrt(v_hat) + eps)
        )

    weight = 1.0
    if not cfg.sequential_ema:
        var_f, var_vt = batch_variances(aux["features"])
        weight = variance_weight(var_f, var_vt, state.book.cfg.var_eps)
    stats = sufficient_stats(
        aux["assignments"], aux["features"], weight, state.book.cfg.self_mix
    )
    if cfg.sequential_ema:
        ema_update_sequential(state.book, stats, MODALITIES)
    else:
        ema_update(state.book, stats)
    track_dead_codes(state.book)
    if state.book.cfg.reseed_dead:
        pool = np.concatenate([aux["features"][m] for m in MODALITIES], axis=0)
        reseed_dead_codes(state.book, pool, _reseed_rng(cfg.seed, state.step))

    indices = np.concatenate([aux["assignments"][m].indices for m in MODALITIES])
    usage, perplexity = codebook_stats(indices, state.book.size)
    metrics = {
        "step": float(state.step),
        "lr": lr,
        "total": components["total"],
        "ntcl": components["ntcl"],
        "match": components["match"],
        "commit": components["commit"],
        "perplexity": perplexity,
        "usage": usage,
    }
    state.step += 1
    return metrics


def batches_per_epoch(n: int, batch_size: int) -> int:
    full, rem = divmod(n, batch_size)
    count = full + (1 if rem >= 2 else 0)
    if count == 0:
        raise ConfigError(f"batches_per_epoch: {n} samples cannot form a batch")
    return count


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11, epoch]))
    return rng.permutation(n)


def batch_for_step(samples: list[TripletSample], cfg: TrainConfig, step: int) -> dict[str, np.ndarray]:
    """The batch any given step sees; a pure function of (seed, step) so a
    resumed run replays the identical schedule."""
    n = len(samples)
    per = batches_per_epoch(n, cfg.batch_size)
    epoch, slot = divmod(step, per)
    order = epoch_order(cfg.seed, epoch, n)
    chunk = order[slot * cfg.batch_size : (slot + 1) * cfg.batch_size]
    return assemble_batch([samples[i] for i in chunk])


def run_training(
    state: TrainState,
    train_samples: list[TripletSample],
    eval_fn=None,
) -> list[dict[str, float]]:
    """Advance to total_steps, one optimizer and EMA update per step; returns
    the metric rows produced. ``eval_fn(state)`` fires every eval_every steps
    when set."""
    rows = []
    cfg = state.train
    while state.step < cfg.total_steps:
        batch = batch_for_step(train_samples, cfg, state.step)
        rows.append(train_step(state, batch))
        if eval_fn is not None and cfg.eval_every > 0 and state.step % cfg.eval_every == 0:
            eval_fn(state)
    return rows


def append_metrics(path: str, rows: list[dict[str, float]]) -> None:
    import os

    new_file = not os.path.exists(path)
    with open(path, "a") as fh:
        if new_file:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format_metric(row[c]) for c in METRIC_COLUMNS) + "\n")


def _format_metric(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else f"{x:.10g}"


_CFG_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "ntcl": NtclConfig,
    "match": MatchConfig,
    "book": CodebookConfig,
    "dims": DataDims,
}


def _cfg_to_tensors(prefix: str, obj) -> dict[str, np.ndarray]:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, bool):
            out[f"{prefix}/{f.name}"] = np.array(int(value), dtype=np.int64)
        elif isinstance(value, int):
            out[f"{prefix}/{f.name}"] = np.array(value, dtype=np.int64)
        elif isinstance(value, float):
            out[f"{prefix}/{f.name}"] = np.array(value, dtype=np.float64)
        # strings (checkpoint_path) are runtime arguments, not state
    return out


def _cfg_from_tensors(tensors: dict[str, np.ndarray], prefix: str, cls):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}/{f.name}"
        if key not in tensors:
            continue
        raw = tensors[key]
        if f.type in ("bool", bool):
            kwargs[f.name] = bool(raw)
        elif f.type in ("int", int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return cls(**kwargs)


def save_checkpoint(state: TrainState, path: str) -> None:
    tensors: dict[str, np.ndarray] = {
        "meta/step": np.array(state.step, dtype=np.int64),
    }
    for section, obj in (
        ("model", state.model), ("train", state.train), ("ntcl", state.ntcl),
        ("match", state.match), ("book", state.book.cfg), ("dims", state.dims),
    ):
        tensors.update(_cfg_to_tensors(f"cfg/{section}", obj))
    for name in state.store.names():
        tensors[f"param/{name}"] = state.store.value(name)
        tensors[f"adam_m/{name}"] = state.adam_m[name]
        tensors[f"adam_v/{name}"] = state.adam_v[name]
    tensors["book/entries"] = state.book.entries
    tensors["book/ema_counts"] = state.book.ema_counts
    tensors["book/ema_sums"] = state.book.ema_sums
    tensors["book/dead_steps"] = state.book.dead_steps
    write_tensor_map(path, tensors)


def load_checkpoint(path: str) -> TrainState:
    tensors = read_tensor_map(path)
    model = _cfg_from_tensors(tensors, "cfg/model", ModelConfig)
    train = _cfg_from_tensors(tensors, "cfg/train", TrainConfig)
    ntcl = _cfg_from_tensors(tensors, "cfg/ntcl", NtclConfig)
    match = _cfg_from_tensors(tensors, "cfg/match", MatchConfig)
    book_cfg = _cfg_from_tensors(tensors, "cfg/book", CodebookConfig)
    dims = _cfg_from_tensors(tensors, "cfg/dims", DataDims)
    store = ParamStore()
    adam_m, adam_v = {}, {}
    for key in sorted(tensors):
        if key.startswith("param/"):
            name = key[len("param/"):]
            store.add(name, tensors[key])
            adam_m[name] = tensors[f"adam_m/{name}"].astype(np.float64)
            adam_v[name] = tensors[f"adam_v/{name}"].astype(np.float64)
    book = Codebook(
        entries=tensors["book/entries"].astype(np.float64),
        ema_counts=tensors["book/ema_counts"].astype(np.float64),
        ema_sums=tensors["book/ema_sums"].astype(np.float64),
        cfg=book_cfg,
        dead_steps=tensors["book/dead_steps"].astype(np.int64),
    )
    return TrainState(
        step=int(tensors["meta/step"]),
        store=store,
        book=book,
        adam_m=adam_m,
        adam_v=adam_v,
        model=model,
        train=train,
        ntcl=ntcl,
        match=match,
        dims=dims,
        hrf=hrf_kernel(dims.tr_seconds, model.hrf_length),
    )
