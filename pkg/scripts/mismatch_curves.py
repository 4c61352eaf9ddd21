#!/usr/bin/env python3
"""Return and entropy curves for AMF vs Uniform under mismatched pre-training.

Writes one run directory per strategy plus an overlay via ``amf compare``.
"""

import argparse
from pathlib import Path

from amf.cli import main


def run(preset: str, seeds: int, out: Path, jobs: int) -> None:
    seed_args = [a for s in range(seeds) for a in ("--seed", str(s))]
    for strategy in ("amf", "uniform", "rebalancing"):
        code = main(["run", "--strategy", strategy, "--pretrain", preset, "--out", str(out / strategy),
                     "--jobs", str(jobs), *seed_args])
        if code:
            raise SystemExit(code)
    main(["compare", *(str(out / s / "aggregate.csv") for s in ("amf", "uniform", "rebalancing")),
          "--out", str(out / "compare")])


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--pretrain", default="6of12")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("runs/mismatch"))
    a = p.parse_args()
    run(a.pretrain, a.seeds, a.out, a.jobs)
