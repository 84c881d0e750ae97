"""Kernel-basis SPC and DeePC experiments on the van der Pol benchmark.

Commands:

``collect``   write training and validation datasets per scenario
``pipeline``  offline basis selection and reduction; writes model bundles and table1.csv
``run``       closed-loop runs for one scenario
``sweep``     pipeline plus every controller on every scenario, with tables and summary
``report``    rebuild tables and summary.json from existing trajectories

Exit codes: 0 success, 2 configuration error, 3 solver or pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, ExperimentConfig, load_config
from .io import load_bundle

log = logging.getLogger("nldeepc")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration (defaults if omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent runs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="nldeepc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="collect datasets")
    sub.add_parser("pipeline", parents=[common], help="run the offline pipeline")
    run = sub.add_parser("run", parents=[common], help="closed-loop runs for one scenario")
    run.add_argument("--scenario", help="scenario name (default: first)")
    run.add_argument("--model", type=Path, help="existing model bundle directory")
    sub.add_parser("sweep", parents=[common], help="full experiment sweep")
    sub.add_parser("report", parents=[common], help="rebuild reports from trajectories")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg.validate()


def _collect(cfg, out: Path):
    for i, sc in enumerate(cfg.scenarios):
        train, val = harness.collect_datasets(cfg, i)
        (out / "data").mkdir(parents=True, exist_ok=True)
        train.to_csv(out / "data" / f"{sc.name}_train.csv")
        val.to_csv(out / "data" / f"{sc.name}_val.csv")
        print(f"{sc.name}: {train.count} training and {val.count} validation samples")


def _pipeline(cfg, out: Path):
    pipes = harness.run_pipelines(cfg, out)
    reports = {k: v.bundle.report for k, v in pipes.items()}
    harness.write_table1(reports, out)
    timings = {k: v.timings for k, v in pipes.items()}
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    for k, r in reports.items():
        print(f"{k}: L={r['L']}, reduced decision variables={r['sizes'][-1]['decision_vars']}")


def _run(cfg, out: Path, args):
    names = [s.name for s in cfg.scenarios]
    name = args.scenario or names[0]
    if name not in names:
        raise ConfigError(f"unknown scenario {name!r}; available: {names}")
    idx = names.index(name)
    if args.model is not None:
        bundle = load_bundle(args.model)
    else:
        bundle = harness.run_pipelines(cfg, out, scenarios=[name])[name].bundle
    runs = harness._run_all(cfg, bundle, idx, args.threads)
    for r in runs:
        harness.write_trajectory(r, out)
    harness.write_runs_index(runs, out)
    summary = harness.finish_report(cfg, runs, {name: bundle.report}, out)
    _print_runs(summary)


def _print_runs(summary):
    for sc, res in summary["runs"].items():
        for key, m in res.items():
            flag = " unstable" if m["unstable"] else ""
            print(f"{sc:>12s} {key:>16s}  AME={m['ame_mean']:.6g}  AME_spc={m['ame_spc_mean']:.3g}{flag}")
    for sc, c in summary["checks"].items():
        for name, ok in c.items():
            print(f"check {sc}/{name}: {'PASS' if ok else 'FAIL'}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        cfg = _load(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "collect":
            _collect(cfg, out)
        elif args.command == "pipeline":
            _pipeline(cfg, out)
        elif args.command == "run":
            _run(cfg, out, args)
        elif args.command == "sweep":
            _print_runs(harness.sweep_and_report(cfg, out, threads=args.threads))
        elif args.command == "report":
            _print_runs(harness.report_from_dir(cfg, out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.PipelineError, harness.SolverFailure) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
