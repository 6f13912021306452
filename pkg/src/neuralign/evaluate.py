"""Cross-modal retrieval evaluation: recall@k over the six ordered modality
direction pairs, codebook health metrics, and embedding export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import MODALITIES, codebook_stats, quantize
from .dataio import TripletSample
from .errors import ConfigError, ShapeError
from .trainer import TrainState, assemble_batch, encode_batch

DIRECTIONS = tuple(
    (a, b) for a in MODALITIES for b in MODALITIES if a != b
)
RECALL_KS = (5, 10)

# Published full-scale reference for the fmri->video direction at k=5; kept in
# the report schema for context, never asserted against desk-scale runs.
EXTERNAL_REFERENCE_R5_FMRI_TO_VIDEO = 50.31

EMBEDDING_SPACES = ("quantized", "continuous")


@dataclass
class RetrievalReport:
    recalls: dict[str, float]  # "<src>_to_<dst>@<k>" -> percentage
    n_queries: int
    usage: float
    perplexity: float
    fingerprint: str
    embedding_space: str


def embed_test_set(
    state: TrainState, samples: list[TripletSample], space: str = "quantized"
) -> dict[str, np.ndarray]:
    """Shared-space embedding matrix per modality, rows aligned by position in
    ``samples``. ``space`` picks the snapped codebook entries or the raw
    encoder aggregates."""
    if space not in EMBEDDING_SPACES:
        raise ConfigError(f"embed_test_set: unknown embedding space {space!r}")
    if not samples:
        raise ConfigError("embed_test_set: empty test split")
    enc = encode_batch(state, assemble_batch(samples))
    out = {}
    for m in MODALITIES:
        values = enc["embeddings"][m].value
        if space == "quantized":
            values = quantize(values, state.book).quantized
        out[m] = values
    return out


def recall_at_k(queries: np.ndarray, gallery: np.ndarray, k: int) -> float:
    """Percentage of rows whose aligned gallery row ranks in the cosine top-k.

    Ties rank the smaller gallery index first, so results are deterministic.
    """
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if queries.ndim != 2 or gallery.ndim != 2:
        raise ShapeError("recall_at_k: expected two rank-2 matrices")
    if queries.shape != gallery.shape:
        raise ShapeError(
            f"recall_at_k: unaligned shapes {queries.shape} and {gallery.shape}"
        )
    n = queries.shape[0]
    if k < 1:
        raise ConfigError("recall_at_k: k must be >= 1")
    if k > n:
        raise ConfigError(f"recall_at_k: k={k} exceeds gallery size {n}")
    q = queries / (np.linalg.norm(queries, axis=1, keepdims=True) + 1e-8)
    g = gallery / (np.linalg.norm(gallery, axis=1, keepdims=True) + 1e-8)
    sims = q @ g.T
    # stable argsort keeps earlier (smaller) indices first among equal scores
    order = np.argsort(-sims, axis=1, kind="stable")
    hits = (order[:, :k] == np.arange(n)[:, None]).any(axis=1)
    return 100.0 * float(hits.mean())


def full_report(
    state: TrainState,
    samples: list[TripletSample],
    space: str = "quantized",
    fingerprint: str = "",
) -> RetrievalReport:
    embeddings = embed_test_set(state, samples, space)
    recalls = {}
    for src, dst in DIRECTIONS:
        for k in RECALL_KS:
            recalls[f"{src}_to_{dst}@{k}"] = recall_at_k(
                embeddings[src], embeddings[dst], k
            )
    indices = np.concatenate(
        [quantize(embeddings[m], state.book).indices for m in MODALITIES]
    )
    usage, perplexity = codebook_stats(indices, state.book.size)
    return RetrievalReport(
        recalls=recalls,
        n_queries=len(samples),
        usage=usage,
        perplexity=perplexity,
        fingerprint=fingerprint,
        embedding_space=space,
    )


def report_to_text(report: RetrievalReport) -> str:
    lines = [
        f"n_queries = {report.n_queries}",
        f"embedding_space = {report.embedding_space}",
    ]
    for src, dst in DIRECTIONS:
        for k in RECALL_KS:
            key = f"{src}_to_{dst}@{k}"
            lines.append(f"recall.{key} = {report.recalls[key]:.4f}")
    lines.append(f"codebook.usage = {report.usage:.6f}")
    lines.append(f"codebook.perplexity = {report.perplexity:.6f}")
    lines.append(f"config_fingerprint = {report.fingerprint}")
    lines.append(
        "external_reference.fmri_to_video@5 = "
        f"{EXTERNAL_REFERENCE_R5_FMRI_TO_VIDEO}"
    )
    return "\n".join(lines) + "\n"


def write_report(report: RetrievalReport, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(report_to_text(report))


def export_embeddings(
    state: TrainState,
    samples: list[TripletSample],
    path: str,
    space: str = "quantized",
) -> None:
    """Comma-separated dump: header then one row per (modality, sample) with
    pair_id, modality name, and the embedding values at float32 precision."""
    embeddings = embed_test_set(state, samples, space)
    dim = embeddings[MODALITIES[0]].shape[1]
    header = "pair_id,modality," + ",".join(f"e{i}" for i in range(dim))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for m in MODALITIES:
            for row, sample in zip(embeddings[m], samples):
                values = ",".join(f"{v:.9g}" for v in row)
                fh.write(f"{sample.pair_id},{m},{values}\n")
