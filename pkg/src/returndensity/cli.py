"""Command-line entry points: ``run``, ``ng-curve``, ``oracle-check`` and ``report``."""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, config as cfgmod, oracle
from ._accel import backend_name
from .densities import ModelKind, make_params
from .experiment import (
    aggregate_trials_csv,
    paths_csv,
    results_csv,
    run_experiment,
    trials_csv,
)
from .updates import ng_curve

logger = logging.getLogger("returndensity")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUTPUT_FILES = ("results.csv", "trials.csv", "paths.csv", "config.ini", "manifest.json")


def _overrides(args) -> Dict[str, Dict[str, str]]:
    out: Dict[str, Dict[str, str]] = {}
    exp = {}
    if args.seed is not None:
        exp["master_seed"] = str(args.seed)
    if args.trials is not None:
        exp["n_trials"] = str(args.trials)
    if args.steps is not None:
        exp["total_steps"] = str(args.steps)
    if exp:
        out["experiment"] = exp
    return out


def _config_text(source: str) -> str:
    """Config text from a path, a preset name, or a manifest written by ``run``."""
    if source.endswith(".json") and Path(source).is_file():
        try:
            return json.loads(Path(source).read_text())["resolved_config"]
        except (ValueError, KeyError) as exc:
            raise cfgmod.ConfigError(f"unreadable manifest {source!r}: {exc}") from None
    return cfgmod.read_config_text(source)


def cmd_run(args) -> int:
    try:
        raw = cfgmod.parse(_config_text(args.config))
        resolved = cfgmod.resolve(raw, _overrides(args))
        config = cfgmod.build(resolved)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    if out_dir.exists() and not out_dir.is_dir():
        print(f"error: {out_dir} exists and is not a directory", file=sys.stderr)
        return EXIT_USAGE

    logger.info("running %s: %d trials x %d steps (%s backend)", config.name, config.n_trials,
                config.total_steps, backend_name())
    try:
        result = run_experiment(config, workers=max(1, args.workers))
    except (FloatingPointError, ValueError, RuntimeError) as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL

    config_text = cfgmod.to_text(resolved)
    manifest = {
        "config_path": str(args.config),
        "resolved_config": config_text,
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "backend": backend_name(),
        "trial_seeds": [t.seed for t in result.trials],
    }
    files = {
        "results.csv": results_csv(config, result.aggregate, len(result.trials)),
        "trials.csv": trials_csv(result.trials),
        "paths.csv": paths_csv(result.trials),
        "config.ini": config_text,
        "manifest.json": json.dumps(manifest, indent=2) + "\n",
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in OUTPUT_FILES:
        (out_dir / name).write_text(files[name])
    for stat, (mean, std) in result.aggregate.items():
        print(f"{config.name:32s} {stat:8s} {mean:10.4f} +- {std:.4f}")
    return EXIT_OK


def _parse_vector(text: str) -> List[float]:
    return [float(x) for x in text.replace(",", " ").split()]


_CURVE_DEFAULTS = {
    ModelKind.GAUSSIAN: "0,1",
    ModelKind.LAPLACE: "0,1",
    ModelKind.SKEWED_LAPLACE: "0,1,0.5",
}


def cmd_ng_curve(args) -> int:
    try:
        kind = ModelKind.parse(args.model)
        current = make_params(kind, _parse_vector(args.current or _CURVE_DEFAULTS[kind]))
        target = make_params(kind, _parse_vector(args.target or args.current or _CURVE_DEFAULTS[kind]))
        lo, hi = _parse_vector(args.delta_range)
        if not hi > lo or args.points < 2:
            raise ValueError("need delta_hi > delta_lo and at least two points")
        if not 0.0 < args.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    delta = np.linspace(lo, hi, args.points)
    rewards = delta - args.discount * target.central + current.central
    text = ng_curve(kind, current, target, rewards, args.discount).to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    reports = oracle.run_all(args.cases, args.seed, n_fixed_points=args.fixed_points)
    failed = False
    for name, rep in reports.items():
        if name == "bellman":
            print(f"{'bellman':16s} worst mean error {rep.worst_bins:.3e} bins, "
                  f"at most {rep.max_iterations} sweeps ({rep.n_cases} cases) "
                  f"{'ok' if rep.ok else 'FAILED'}")
        else:
            print(f"{name:16s} worst relative discrepancy {rep.worst:.3e} ({rep.n_cases} cases) "
                  f"{'ok' if rep.ok else 'FAILED'}")
        failed |= not rep.ok
    for rep in reports.values():
        for line in rep.failures:
            print(line, file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    blocks = []
    for directory in args.dirs:
        d = Path(directory)
        try:
            config = cfgmod.build(cfgmod.resolve(cfgmod.parse((d / "config.ini").read_text())))
            trials_text = (d / "trials.csv").read_text()
        except (OSError, cfgmod.ConfigError) as exc:
            print(f"error: {d}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        n_trials = len({ln.split(",")[0] for ln in trials_text.strip().splitlines()[1:]})
        text = results_csv(config, aggregate_trials_csv(trials_text), n_trials)
        blocks.append(text if not blocks else text.split("\n", 1)[1])
    text = "".join(blocks)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="returndensity", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate an experiment")
    run.add_argument("--config", required=True, help="config file, bundled preset name, or manifest.json")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--steps", type=int, help="override the number of learning steps per trial")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--workers", type=int, default=1, help="trials run in parallel")
    run.set_defaults(func=cmd_run)

    curve = sub.add_parser("ng-curve", help="natural-gradient values against the TD error")
    curve.add_argument("--model", default="gaussian")
    curve.add_argument("--current", help="current parameters, comma separated")
    curve.add_argument("--target", help="successor parameters (default: same as current)")
    curve.add_argument("--delta-range", default="-5,5")
    curve.add_argument("--points", type=int, default=201)
    curve.add_argument("--discount", type=float, default=0.95)
    curve.add_argument("--out", help="output file (default: stdout)")
    curve.set_defaults(func=cmd_ng_curve)

    check = sub.add_parser("oracle-check", help="closed-form updates vs quadrature, Bellman fixed points")
    check.add_argument("--cases", type=int, default=100, help="randomised contexts per model")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--fixed-points", type=int, default=3, help="random MDPs for the fixed-point check")
    check.set_defaults(func=cmd_oracle_check)

    report = sub.add_parser("report", help="re-aggregate trials.csv files of finished runs")
    report.add_argument("dirs", nargs="+", help="run output directories")
    report.add_argument("--out", help="output file (default: stdout)")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
