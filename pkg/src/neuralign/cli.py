"""Command-line entry point.

Verbs: generate-data, train, eval, export-embeddings, ablate. Any failure
exits nonzero with a single `error[<category>]: <message>` line on stderr so
wrapper scripts can parse outcomes.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import RunConfig, load_config
from .dataio import SPLIT_TEST, SPLIT_TRAIN, TripletSample, write_dataset, write_manifest
from .errors import ConfigError, FormatError, NonFiniteLossError, ShapeError
from .evaluate import (
    EMBEDDING_SPACES,
    export_embeddings,
    full_report,
    recall_at_k,
    report_to_text,
    write_report,
)
from .synthdata import delay_steps, generate_dataset, manifest_fields, pre_shift_fmri
from .trainer import (
    TrainState,
    append_metrics,
    dims_from_samples,
    init_state,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

_ERROR_CATEGORIES = (
    (ConfigError, "config", 2),
    (FormatError, "format", 3),
    (ShapeError, "shape", 4),
    (NonFiniteLossError, "numeric", 6),
    (OSError, "io", 5),
)

_VARIANTS = (
    ("full", {}),
    ("no_ntcl", {"ablate_ntcl": True}),
    ("no_matching", {"ablate_matching": True}),
    ("sequential_ema", {"sequential_ema": True}),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuralign",
        description="fMRI/video/text alignment on synthetic hemodynamic data",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(verb, help_text, seed=False, pre_shift=False, space=False, checkpoint=False):
        sp = sub.add_parser(verb, help=help_text)
        sp.add_argument("--config", metavar="PATH", default=None,
                        help="key = value config file (defaults when omitted)")
        sp.add_argument("--out", metavar="PATH", default=None,
                        help="output path for this verb")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="override the relevant seed from the config")
        if pre_shift:
            sp.add_argument("--pre-shift-hrf", action="store_true",
                            help="shift fMRI rows back by the hemodynamic delay "
                                 "before training (recorded in the checkpoint)")
        if space:
            sp.add_argument("--embedding-space", choices=EMBEDDING_SPACES,
                            default="quantized",
                            help="retrieve from snapped codes or raw encoder output")
        if checkpoint:
            sp.add_argument("checkpoint", nargs="?", default=None,
                            help="checkpoint path (default: train.checkpoint_path)")
        return sp

    add("generate-data", "write the synthetic dataset and its manifest", seed=True)
    add("train", "train from scratch and write a checkpoint", seed=True, pre_shift=True)
    add("eval", "retrieval report for a trained checkpoint", space=True, checkpoint=True)
    add("export-embeddings", "dump test-set embeddings as CSV", space=True, checkpoint=True)
    add("ablate", "train the full model and the three ablated variants",
        seed=True, pre_shift=True)
    return parser


def _splits(samples: list[TripletSample]) -> tuple[list[TripletSample], list[TripletSample]]:
    train = [s for s in samples if s.split == SPLIT_TRAIN]
    test = [s for s in samples if s.split == SPLIT_TEST]
    return train, test


def _prepare(cfg: RunConfig, pre_shift: bool):
    samples = generate_dataset(cfg.synth)
    if pre_shift:
        samples = pre_shift_fmri(samples, delay_steps(cfg.synth))
    return _splits(samples)


def _fresh_state(cfg: RunConfig, train_samples: list[TripletSample]) -> TrainState:
    dims = dims_from_samples(train_samples, cfg.synth.tr_seconds)
    return init_state(dims, cfg.model, cfg.train, cfg.ntcl, cfg.match, cfg.book)


def _check_dims(state: TrainState, samples: list[TripletSample]) -> None:
    found = dims_from_samples(samples, state.dims.tr_seconds)
    if found != state.dims:
        raise ConfigError(
            f"checkpoint was trained on dims {state.dims}, config produces {found}"
        )


def _cmd_generate_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.synth.seed = args.seed
    cfg.validate()
    out = args.out or "dataset.nalign"
    samples = generate_dataset(cfg.synth)
    write_dataset(out, samples)
    write_manifest(out + ".manifest", manifest_fields(cfg.synth))
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.pre_shift_hrf:
        cfg.train.pre_shift_hrf = True
    cfg.validate()
    train_samples, test_samples = _prepare(cfg, cfg.train.pre_shift_hrf)
    state = _fresh_state(cfg, train_samples)
    ckpt = args.out or cfg.train.checkpoint_path

    def eval_fn(s: TrainState) -> None:
        from .evaluate import embed_test_set

        emb = embed_test_set(s, test_samples)
        r5 = recall_at_k(emb["fmri"], emb["video"], 5)
        print(f"step {s.step}: fmri->video R@5 = {r5:.2f}%")

    metrics_path = ckpt + ".metrics.csv"
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    rows = run_training(state, train_samples,
                        eval_fn if cfg.train.eval_every > 0 and test_samples else None)
    save_checkpoint(state, ckpt)
    append_metrics(metrics_path, rows)
    final = rows[-1]["total"] if rows else float("nan")
    print(f"trained {state.step} steps, final total loss {final:.6f}")
    print(f"checkpoint: {ckpt}")
    print(f"metrics: {metrics_path}")
    return 0


def _load_state(args, cfg: RunConfig) -> TrainState:
    path = args.checkpoint or cfg.train.checkpoint_path
    return load_checkpoint(path)


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    cfg.validate()
    state = _load_state(args, cfg)
    _, test_samples = _prepare(cfg, state.train.pre_shift_hrf)
    if not test_samples:
        raise ConfigError("eval: config produces an empty test split")
    _check_dims(state, test_samples)
    report = full_report(state, test_samples, args.embedding_space, cfg.fingerprint())
    text = report_to_text(report)
    sys.stdout.write(text)
    if args.out:
        write_report(report, args.out)
        print(f"report: {args.out}")
    return 0


def _cmd_export(args) -> int:
    cfg = load_config(args.config)
    cfg.validate()
    state = _load_state(args, cfg)
    _, test_samples = _prepare(cfg, state.train.pre_shift_hrf)
    if not test_samples:
        raise ConfigError("export-embeddings: config produces an empty test split")
    _check_dims(state, test_samples)
    out = args.out or "embeddings.csv"
    export_embeddings(state, test_samples, out, args.embedding_space)
    print(f"embeddings: {out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.pre_shift_hrf:
        cfg.train.pre_shift_hrf = True
    cfg.validate()
    train_samples, test_samples = _prepare(cfg, cfg.train.pre_shift_hrf)
    if not test_samples:
        raise ConfigError("ablate: config produces an empty test split")

    lines = [f"{'variant':<16} {'f->v R@5':>9} {'f->v R@10':>10} "
             f"{'v->f R@5':>9} {'usage':>7} {'perplexity':>11}"]
    for name, overrides in _VARIANTS:
        variant_cfg = dataclasses.replace(cfg.train, **overrides)
        state = init_state(
            dims_from_samples(train_samples, cfg.synth.tr_seconds),
            cfg.model, variant_cfg, cfg.ntcl, cfg.match, cfg.book,
        )
        run_training(state, train_samples)
        report = full_report(state, test_samples, fingerprint=cfg.fingerprint())
        lines.append(
            f"{name:<16} {report.recalls['fmri_to_video@5']:>8.2f}% "
            f"{report.recalls['fmri_to_video@10']:>9.2f}% "
            f"{report.recalls['video_to_fmri@5']:>8.2f}% "
            f"{report.usage:>7.3f} {report.perplexity:>11.3f}"
        )
        print(lines[-1])
    table = "\n".join(lines) + "\n"
    out = args.out or "ablation.txt"
    with open(out, "w") as fh:
        fh.write(table)
    print(f"table: {out}")
    return 0


_COMMANDS = {
    "generate-data": _cmd_generate_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-embeddings": _cmd_export,
    "ablate": _cmd_ablate,
}


def entry(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point by design
        for cls, category, code in _ERROR_CATEGORIES:
            if isinstance(exc, cls):
                break
        else:
            category, code = "internal", 1
        message = str(exc).replace("\n", "; ")
        print(f"error[{category}]: {message}", file=sys.stderr)
        return code
