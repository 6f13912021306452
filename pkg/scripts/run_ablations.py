#!/usr/bin/env python3
"""Run the four-variant ablation (full, no_ntcl, no_matching, sequential_ema)
over several seeds and print per-seed tables plus the seed-mean summary.

Usage:
    python3 scripts/run_ablations.py [--config configs/desk.cfg]
                                     [--seeds 0 1 2] [--outdir runs/]
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from neuralign.cli import _VARIANTS
from neuralign.config import load_config
from neuralign.evaluate import full_report
from neuralign.synthdata import generate_dataset
from neuralign.trainer import dims_from_samples, init_state, run_training


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=os.path.join(
        os.path.dirname(__file__), "..", "configs", "desk.cfg"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--outdir", default="runs")
    args = parser.parse_args()

    cfg = load_config(args.config)
    cfg.validate()
    os.makedirs(args.outdir, exist_ok=True)
    samples = generate_dataset(cfg.synth)
    train_samples = [s for s in samples if s.split == "train"]
    test_samples = [s for s in samples if s.split == "test"]
    dims = dims_from_samples(train_samples, cfg.synth.tr_seconds)

    scores: dict[str, list[float]] = {name: [] for name, _ in _VARIANTS}
    for seed in args.seeds:
        print(f"--- seed {seed}")
        for name, overrides in _VARIANTS:
            train_cfg = dataclasses.replace(cfg.train, seed=seed, **overrides)
            state = init_state(dims, cfg.model, train_cfg, cfg.ntcl, cfg.match, cfg.book)
            run_training(state, train_samples)
            report = full_report(state, test_samples, fingerprint=cfg.fingerprint())
            r5 = report.recalls["fmri_to_video@5"]
            scores[name].append(r5)
            print(f"{name:<16} fmri->video R@5 {r5:6.2f}%")

    print("--- mean over seeds", args.seeds)
    lines = [f"{'variant':<16} {'mean R@5':>9}"]
    for name, _ in _VARIANTS:
        lines.append(f"{name:<16} {np.mean(scores[name]):>8.2f}%")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    out = os.path.join(args.outdir, "ablation_summary.txt")
    with open(out, "w") as fh:
        fh.write(table)
    print(f"summary: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
