"""Command line entry point: ``amf run | compare | sweep``.

Configs are YAML mappings whose keys are :class:`ExperimentConfig` fields, e.g.::

    budget: 40
    strategy: amf
    pretrain_allocation: 6of12
    seeds: [0, 1, 2]
    criterion:
      candidate_budget: 100
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .runner import (
    ExperimentConfig,
    RunResult,
    allocation_preset,
    bootstrap_ci,
    parse_allocation,
    run_seeds,
    with_strategy,
)
from .selection import CriterionConfig, SelectionStrategy, StrategyKind
from .svg import Series, line_plot

log = logging.getLogger(__name__)

OUT_ENV = "AMF_OUT_DIR"
SEED_HEADER = ["round", "task_angle", "mean_return", "mean_entropy", "counts_json", "ms"]
AGG_HEADER = [
    "strategy", "round", "n_seeds",
    "return_mean", "return_lo", "return_hi",
    "entropy_mean", "entropy_lo", "entropy_hi",
]
WEIGHT_HEADER = ["round", "ref_traj", "candidate_angle", "weight", "clipped"]

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class RunManifest:
    config_path: str | None
    config: ExperimentConfig
    out_dir: str
    version: str = __version__
    started: str = ""

    def to_dict(self) -> dict:
        return {
            "config_path": self.config_path,
            "config": config_to_dict(self.config),
            "out_dir": self.out_dir,
            "version": self.version,
            "started": self.started,
        }


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_CRITERION_FIELDS = {f.name: f for f in dataclasses.fields(CriterionConfig)}
_INT = {"budget", "batch", "eval_task_count", "eval_episodes", "horizon", "num_features",
        "pretrain_steps", "finetune_steps", "alpha_steps",
        "candidate_budget", "max_eval_tasks", "max_reference_trajectories"}
_FLOAT = {"discount", "goal_radius", "max_speed", "noise_std", "lengthscale", "signal_variance",
          "gp_noise_variance", "likelihood_std", "linear_lr", "initial_alpha", "alpha_lr", "conservative_beta",
          "weight_clip_max", "weight_floor", "variance_floor"}
_BOOL = {"adaptive_prior", "self_normalize"}
_STR = {"policy_kind", "task_space", "embedding_kind"}
_OPTIONAL = {"gp_noise_variance", "likelihood_std", "weight_clip_max"}


def _coerce(key: str, value, where: str):
    if value is None and key in _OPTIONAL:
        return None
    if key in _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {key!r} expects true/false, got {value!r}")
        return value
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: {key!r} expects an integer, got {value!r}")
        return value
    if key in _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {key!r} expects a number, got {value!r}")
        return float(value)
    if key in _STR:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: {key!r} expects a string, got {value!r}")
        return value
    return value


def _line_map(node) -> dict:
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: (k.start_mark.line + 1, v) for k, v in node.value if isinstance(k, yaml.ScalarNode)}


def config_from_mapping(data: dict, source: str = "<config>", lines: dict | None = None) -> ExperimentConfig:
    """Build a config from a plain mapping; ``lines`` maps keys to (line, node) for messages."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")

    def where(key):
        return f"{source}:{lines[key][0]}" if key in lines else source

    kwargs = {}
    eval_count = data.get("eval_task_count", 12)
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
        if key == "criterion":
            kwargs[key] = _criterion(value, source, where(key), _line_map(lines.get(key, (0, None))[1]))
        elif key == "strategy":
            kwargs[key] = value
        elif key == "seeds":
            seeds = [value] if isinstance(value, int) and not isinstance(value, bool) else value
            if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
                raise ConfigError(f"{where(key)}: 'seeds' expects an integer or list of integers")
            kwargs[key] = tuple(seeds)
        elif key == "pretrain_allocation":
            try:
                if isinstance(value, str):
                    kwargs[key] = parse_allocation(value, eval_count)
                elif value is None:
                    kwargs[key] = None
                else:
                    kwargs[key] = tuple(int(v) for v in value)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{where(key)}: bad pretrain_allocation: {err}") from None
        else:
            kwargs[key] = _coerce(key, value, where(key))
    strategy = kwargs.pop("strategy", "amf")
    try:
        kind = StrategyKind(strategy if not isinstance(strategy, SelectionStrategy) else strategy.kind)
    except ValueError:
        raise ConfigError(
            f"{where('strategy')}: unknown strategy {strategy!r}; "
            f"choose from {[k.value for k in StrategyKind]}"
        ) from None
    try:
        cfg = ExperimentConfig(**kwargs)
        return with_strategy(cfg, kind)
    except ValueError as err:
        raise ConfigError(f"{source}: {err}") from None


def _criterion(value, source, where, lines) -> CriterionConfig:
    if value is None:
        return CriterionConfig()
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: 'criterion' must be a mapping")
    kw = {}
    for key, v in value.items():
        loc = f"{source}:{lines[key][0]}" if key in lines else where
        if key not in _CRITERION_FIELDS:
            raise ConfigError(f"{loc}: unknown criterion key {key!r}")
        if key == "logprob_clip":
            if not (isinstance(v, list) and len(v) == 2):
                raise ConfigError(f"{loc}: 'logprob_clip' expects [low, high]")
            kw[key] = (float(v[0]), float(v[1]))
        else:
            kw[key] = _coerce(key, v, loc)
    try:
        return CriterionConfig(**kw)
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from None


def load_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        problem = getattr(err, "problem", None) or str(err)
        raise ConfigError(f"{source}:{line}: parse error: {problem}") from None
    if data is None:
        data = {}
    return config_from_mapping(data, source, _line_map(node))


def parse_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply flag overrides.

    Recognised overrides: strategy, seeds, pretrain, budget, policy.
    """
    if path is None:
        cfg = ExperimentConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{path}: no such config file")
        cfg = load_config_text(p.read_text(), str(path))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        if "budget" in overrides:
            cfg = dataclasses.replace(cfg, budget=int(overrides["budget"]))
        if "policy" in overrides:
            cfg = dataclasses.replace(cfg, policy_kind=overrides["policy"])
        if "seeds" in overrides:
            cfg = dataclasses.replace(cfg, seeds=tuple(overrides["seeds"]))
        if "pretrain" in overrides:
            cfg = dataclasses.replace(
                cfg, pretrain_allocation=parse_allocation(overrides["pretrain"], cfg.eval_task_count)
            )
        kind = overrides.get("strategy", cfg.strategy.kind)
        cfg = with_strategy(cfg, kind)
    except ValueError as err:
        raise ConfigError(f"command line: {err}") from None
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "strategy":
            v = v.kind.value
        elif f.name == "criterion":
            v = {k: (list(x) if isinstance(x, tuple) else x) for k, x in dataclasses.asdict(v).items()}
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def emit_metrics(
    runs: list[RunResult],
    out_dir: str | Path,
    label: str = "amf",
    plots: bool = True,
    weights: bool = False,
    timing: bool = False,
) -> list[Path]:
    """Write per-seed CSVs, the bootstrap aggregate, optional SVG plots and weight dumps.

    The ``ms`` column is left empty unless ``timing`` is set so that reruns are byte-identical.
    """
    if not runs:
        raise ValueError("no runs to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for run in runs:
        path = out / f"seed_{run.seed}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SEED_HEADER)
            for m in run.metrics:
                w.writerow([
                    m.round, _fmt(m.task.angle), _fmt(m.mean_return), _fmt(m.mean_entropy),
                    json.dumps(list(m.counts), separators=(",", ":")),
                    _fmt(m.ms) if timing else "",
                ])
        written.append(path)
        if weights:
            wpath = out / f"weights_seed_{run.seed}.csv"
            with open(wpath, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(WEIGHT_HEADER)
                for rnd, j, angle, weight, clipped in run.weights:
                    w.writerow([rnd, j, _fmt(angle), _fmt(weight), int(clipped)])
            written.append(wpath)
    rows = aggregate(runs, label)
    agg = out / "aggregate.csv"
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], r[2], *(_fmt(v) for v in r[3:])])
    written.append(agg)
    if plots:
        written += _plot_aggregates({label: rows}, out, prefix="")
    return written


def aggregate(runs: list[RunResult], label: str, level: float = 0.9, resamples: int = 1000) -> list[tuple]:
    """Per-round mean and bootstrap CI over seeds (rounds every seed reached)."""
    length = min(len(r.metrics) for r in runs)
    rows = []
    for i in range(length):
        ret = [r.metrics[i].mean_return for r in runs]
        ent = [r.metrics[i].mean_entropy for r in runs]
        rlo, rhi = bootstrap_ci(ret, level, resamples, np.random.default_rng([i, 0]))
        elo, ehi = bootstrap_ci(ent, level, resamples, np.random.default_rng([i, 1]))
        rows.append((label, runs[0].metrics[i].round, len(runs),
                     float(np.mean(ret)), rlo, rhi, float(np.mean(ent)), elo, ehi))
    return rows


def read_aggregate(path: str | Path) -> dict[str, list[tuple]]:
    out: dict[str, list[tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AGG_HEADER:
            raise ConfigError(f"{path}: not an aggregate CSV (header {reader.fieldnames})")
        for row in reader:
            out.setdefault(row["strategy"], []).append((
                row["strategy"], int(row["round"]), int(row["n_seeds"]),
                *(float(row[k]) for k in AGG_HEADER[3:]),
            ))
    return out


def _plot_aggregates(groups: dict[str, list[tuple]], out: Path, prefix: str) -> list[Path]:
    written = []
    for name, col, ylabel in (("return", 3, "mean multi-task return"), ("entropy", 6, "mean policy entropy")):
        series = [
            Series(label, [r[1] for r in rows], [r[col] for r in rows],
                   [r[col + 1] for r in rows], [r[col + 2] for r in rows])
            for label, rows in groups.items()
        ]
        path = out / f"{prefix}{name}.svg"
        path.write_text(line_plot(series, f"{name} vs round", "round", ylabel))
        written.append(path)
    return written


def _default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / sub


def _write_manifest(manifest: RunManifest) -> None:
    out = Path(manifest.out_dir)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    (out / "config.yaml").write_text(yaml.safe_dump(config_to_dict(manifest.config), sort_keys=False))


def _overrides(args) -> dict:
    return {
        "strategy": getattr(args, "strategy", None),
        "seeds": args.seed,
        "pretrain": getattr(args, "pretrain", None),
        "budget": args.budget,
        "policy": args.policy,
    }


def cmd_run(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    out = Path(args.out) if args.out else _default_out(cfg.strategy.kind.value)
    manifest = RunManifest(args.config, cfg, str(out), started=datetime.datetime.now().isoformat(timespec="seconds"))
    runs = run_seeds(cfg, args.jobs, record_weights=args.dump_weights)
    emit_metrics(runs, out, cfg.strategy.kind.value, plots=not args.no_plots,
                 weights=args.dump_weights, timing=args.timing)
    _write_manifest(manifest)
    finals = [r.metrics[-1].mean_return for r in runs if r.metrics]
    if finals:
        lo, hi = bootstrap_ci(finals)
        print(f"{cfg.strategy.kind.value}: final mean return {np.mean(finals):.4f} "
              f"(90% CI {lo:.4f} .. {hi:.4f}) over {len(finals)} seeds -> {out}")
    failed = [r for r in runs if r.error]
    for r in failed:
        print(f"seed {r.seed}: {r.error}", file=sys.stderr)
    return EXIT_NUMERICAL if failed else 0


def cmd_compare(args) -> int:
    groups: dict[str, list[tuple]] = {}
    for path in args.aggregates:
        if not Path(path).is_file():
            raise ConfigError(f"{path}: no such aggregate CSV")
        groups.update(read_aggregate(path))
    out = Path(args.out) if args.out else _default_out("compare")
    out.mkdir(parents=True, exist_ok=True)
    _plot_aggregates(groups, out, prefix="compare_")
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "final_round", "return_mean", "return_lo", "return_hi"])
        for label, rows in groups.items():
            last = rows[-1]
            w.writerow([label, last[1], _fmt(last[3]), _fmt(last[4]), _fmt(last[5])])
            print(f"{label}: round {last[1]} return {last[3]:.4f} [{last[4]:.4f}, {last[5]:.4f}]")
    return 0


def cmd_sweep(args) -> int:
    base = parse_config(args.config, _overrides(args))
    out = Path(args.out) if args.out else _default_out("sweep")
    out.mkdir(parents=True, exist_ok=True)
    strategies = [StrategyKind(s) for s in args.strategies.split(",")]
    levels = range(1, base.eval_task_count + 1)
    summary = []
    failed = False
    for k in levels:
        alloc = allocation_preset(k, base.eval_task_count, base.eval_task_count)
        finals = {}
        for kind in strategies:
            cfg = with_strategy(dataclasses.replace(base, pretrain_allocation=alloc), kind)
            sub = out / f"{k}of{base.eval_task_count}" / kind.value
            runs = run_seeds(cfg, args.jobs)
            failed |= any(r.error for r in runs)
            emit_metrics(runs, sub, kind.value, plots=not args.no_plots)
            _write_manifest(RunManifest(args.config, cfg, str(sub)))
            finals[kind] = np.array([r.metrics[-1].mean_return for r in runs])
            lo, hi = bootstrap_ci(finals[kind])
            summary.append((k, kind.value, float(finals[kind].mean()), lo, hi))
        if len(strategies) >= 2:
            gap = finals[strategies[0]] - finals[strategies[1]]
            lo, hi = bootstrap_ci(gap)
            summary.append((k, f"gap:{strategies[0].value}-{strategies[1].value}", float(gap.mean()), lo, hi))
        print(f"{k}/{base.eval_task_count}: " + ", ".join(f"{s.value}={finals[s].mean():.4f}" for s in strategies))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["demonstrated", "strategy", "final_mean", "final_lo", "final_hi"])
        for k, label, m, lo, hi in summary:
            w.writerow([k, label, _fmt(m), _fmt(lo), _fmt(hi)])
    if not args.no_plots:
        series = []
        for label in dict.fromkeys(r[1] for r in summary):
            rows = [r for r in summary if r[1] == label]
            series.append(Series(label, [r[0] for r in rows], [r[2] for r in rows],
                                 [r[3] for r in rows], [r[4] for r in rows]))
        (out / "sweep.svg").write_text(
            line_plot(series, "final return by pre-training coverage", "tasks demonstrated", "final return")
        )
    return EXIT_NUMERICAL if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amf", description="Active multi-task fine-tuning laboratory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, strategy=True):
        p.add_argument("--config", help="YAML experiment config (defaults when omitted)")
        if strategy:
            p.add_argument("--strategy", choices=[k.value for k in StrategyKind])
        p.add_argument("--seed", type=int, action="append", help="seed to run; repeatable")
        p.add_argument("--budget", type=int)
        p.add_argument("--policy", choices=["gp", "feature_linear"])
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--no-plots", action="store_true")

    run = sub.add_parser("run", help="run one strategy over the configured seeds")
    common(run)
    run.add_argument("--pretrain", help='allocation: "uniform", "6of12" or explicit counts')
    run.add_argument("--dump-weights", action="store_true", help="write importance-weight CSVs")
    run.add_argument("--timing", action="store_true", help="fill the ms column with wall-clock times")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="overlay aggregate CSVs from several runs")
    cmp_.add_argument("aggregates", nargs="+")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    sweep = sub.add_parser("sweep", help="pre-training coverage sweep 1/12 .. 12/12")
    common(sweep, strategy=False)
    sweep.add_argument("--strategies", default="amf,uniform")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 1
    except ArithmeticError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
