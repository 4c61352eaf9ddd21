#!/usr/bin/env python3
"""Final-return gap between AMF and Uniform as pre-training coverage goes from 1/12 to 12/12."""

import argparse
import sys

from amf.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/sweep")
    a = p.parse_args()
    seed_args = [x for s in range(a.seeds) for x in ("--seed", str(s))]
    sys.exit(main(["sweep", "--strategies", "amf,uniform", "--out", a.out, "--jobs", str(a.jobs), *seed_args]))
