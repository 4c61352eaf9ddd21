#!/usr/bin/env python3
"""Return on pre-trained tasks after fine-tuning only on unseen ones, with and without the adaptive prior."""

import argparse
import dataclasses

import numpy as np

from amf.diagnostics import forgetting_probe
from amf.runner import ExperimentConfig

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--embedding", choices=["last_layer", "loss_gradient"], default="last_layer")
    a = p.parse_args()
    base = ExperimentConfig(policy_kind="feature_linear", embedding_kind=a.embedding)
    for prior in (False, True):
        studies = [forgetting_probe(dataclasses.replace(base, adaptive_prior=prior), s, a.rounds)
                   for s in range(a.seeds)]
        before = np.mean([s.before for s in studies])
        after = np.mean([s.after for s in studies])
        label = "with prior" if prior else "no prior  "
        print(f"{label}: seen-task return {before:.4f} -> {after:.4f} ({100 * (after - before) / abs(before):+.1f}%)")
        if prior:
            print("mean alpha per task:", np.round(np.mean([s.alpha for s in studies], axis=0), 3).tolist())
