#!/usr/bin/env python3
"""Importance-weight health over an AMF run: effective sample size and clip rate per round."""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from amf.cli import emit_metrics
from amf.runner import ExperimentConfig, allocation_preset, run_experiment, with_strategy

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretrain", type=int, default=6, help="number of pre-trained tasks (k of 12)")
    p.add_argument("--out", type=Path, default=Path("runs/weights"))
    a = p.parse_args()
    cfg = with_strategy(ExperimentConfig(pretrain_allocation=allocation_preset(a.pretrain)), "amf")
    result = run_experiment(cfg, a.seed, record_weights=True)
    emit_metrics([result], a.out, "amf", plots=False, weights=True)
    per_round = defaultdict(list)
    for rnd, _j, angle, w, clipped in result.weights:
        per_round[(rnd, angle)].append((w, clipped))
    rows = defaultdict(lambda: [[], []])
    for (rnd, _angle), vals in per_round.items():
        w = np.array([v[0] for v in vals])
        ess = w.sum() ** 2 / max(np.sum(w**2), 1e-300)
        rows[rnd][0].append(ess / len(w))
        rows[rnd][1].append(np.mean([v[1] for v in vals]))
    with open(a.out / "weight_summary.csv", "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["round", "mean_relative_ess", "clip_fraction"])
        for rnd in sorted(rows):
            ess, clip = rows[rnd]
            out.writerow([rnd, f"{np.mean(ess):.6g}", f"{np.mean(clip):.6g}"])
            print(f"round {rnd:2d}: relative ESS {np.mean(ess):.3f}, clipped {100 * np.mean(clip):.1f}%")
