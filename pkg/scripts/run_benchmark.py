#!/usr/bin/env python3
"""Train the full model on the desk benchmark over several seeds and report
the mean fmri->video retrieval scores.

Usage:
    python3 scripts/run_benchmark.py [--config configs/desk.cfg]
                                     [--seeds 0 1 2] [--outdir runs/]
"""

import argparse
import dataclasses
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from neuralign.config import load_config
from neuralign.evaluate import full_report
from neuralign.trainer import (
    append_metrics,
    dims_from_samples,
    init_state,
    run_training,
    save_checkpoint,
)
from neuralign.synthdata import generate_dataset


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

    r5_scores, r10_scores = [], []
    for seed in args.seeds:
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        state = init_state(dims, cfg.model, train_cfg, cfg.ntcl, cfg.match, cfg.book)
        start = time.monotonic()
        rows = run_training(state, train_samples)
        elapsed = time.monotonic() - start
        ckpt = os.path.join(args.outdir, f"benchmark_seed{seed}.nalignck")
        save_checkpoint(state, ckpt)
        metrics_path = ckpt + ".metrics.csv"
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
        append_metrics(metrics_path, rows)
        report = full_report(state, test_samples, fingerprint=cfg.fingerprint())
        r5 = report.recalls["fmri_to_video@5"]
        r10 = report.recalls["fmri_to_video@10"]
        r5_scores.append(r5)
        r10_scores.append(r10)
        print(
            f"seed {seed}: fmri->video R@5 {r5:.2f}%  R@10 {r10:.2f}%  "
            f"usage {report.usage:.3f}  ({elapsed:.0f}s, {ckpt})"
        )

    print(
        f"mean over {len(args.seeds)} seeds: "
        f"R@5 {np.mean(r5_scores):.2f}%  R@10 {np.mean(r10_scores):.2f}%"
    )
    chance = 100.0 * 5.0 / len(test_samples)
    print(f"chance R@5 at n={len(test_samples)}: {chance:.2f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
