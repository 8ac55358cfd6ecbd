"""Command-line entry point: ``halstream <subcommand> [--config FILE] [key=value ...]``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
Diagnostics go to stderr; data goes to files under ``out.dir`` or stdout.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, help_text, load_config
from .errors import ValidationError

log = logging.getLogger("halstream")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; ours is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


SUBCOMMANDS = {
    "generate": "write a synthetic event log as an edge/label CSV pair",
    "train": "train one strategy and write its trace and summary",
    "compare": "strategy comparison to early-stopped convergence",
    "budget": "fixed-epoch comparison with a time-matched Default-X",
    "sweep": "moving-average window sweep",
    "ablate": "paired edge- or target-shuffling ablation",
    "verify-theory": "Monte Carlo check of label-variance formulas and regret coefficients",
    "speedup": "one-hot vs history-average steps-to-threshold race",
    "plot-data": "x,y,series CSV from trace files for an NDCG vs log-time plot",
}


def build_parser() -> argparse.ArgumentParser:
    keys = "configuration keys:\n" + help_text()
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="flat 'key = value' config file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel runs (default: cores)")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, applied last")

    p = _Parser(prog="halstream", description=__doc__, epilog=keys,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, desc in SUBCOMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=desc, description=desc, epilog=keys,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "generate":
            sp.add_argument("--seed", type=int, help="shorthand for synth.seed=SEED")
        elif name == "ablate":
            sp.add_argument("--mode", choices=("edges", "targets"), required=True)
        elif name == "verify-theory":
            sp.add_argument("--grid", default="default",
                            help="'default' or cells 'k:h:u' separated by commas")
        elif name == "plot-data":
            sp.add_argument("--traces", nargs="+", required=True, metavar="PATH",
                            help="trace.jsonl files or directories searched recursively")
    return p


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("halstream").setLevel(level)


def _parse_grid(text: str):
    from .experiments import DEFAULT_THEORY_GRID

    if text == "default":
        return DEFAULT_THEORY_GRID
    cells = []
    for cell in text.split(","):
        parts = cell.strip().split(":")
        if len(parts) != 3:
            raise ValidationError(f"grid cell must be k:h:u, got {cell!r}")
        try:
            cells.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise ValidationError(f"grid cell must be k:h:u, got {cell!r}") from None
    return tuple(cells)


def _cmd_generate(cfg, args):
    from .experiments import ExperimentSpec, write_atomic
    from .stream import synth_generate, write_edges_csv, write_labels_csv

    spec = ExperimentSpec.from_config(cfg)
    if spec.data.synthetic is None:
        raise ValidationError("generate needs data.source = synthetic")
    d = cfg.out_dir() / "generate"
    d.mkdir(parents=True, exist_ok=True)
    lg = synth_generate(spec.data.synthetic)
    write_edges_csv(lg, d / "edges.csv")
    write_labels_csv(lg, d / "labels.csv")
    write_atomic(d / "spec.snapshot", cfg.dump())
    print(d)


def _cmd_train(cfg, args):
    from .experiments import ExperimentSpec, RunJob, csv_text, execute, trace_jsonl, write_atomic
    from .pseudo import Strategy

    spec = ExperimentSpec.from_config(cfg)
    r = execute(RunJob(spec, Strategy.parse(cfg["strategy"]), 0))
    rows = [{"strategy": r.strategy, "split": split, "ndcg10": v, "steps": r.steps_to_best,
             "time_s": r.time_to_best, "best_epoch": r.best_epoch}
            for split, v in (("valid", r.valid_ndcg), ("test", r.test_ndcg))]
    d = cfg.out_dir() / "train"
    write_atomic(d / "summary.csv", csv_text(("strategy", "split", "ndcg10", "steps", "time_s", "best_epoch"), rows))
    write_atomic(d / "trace.jsonl", trace_jsonl(r.trace))
    write_atomic(d / "spec.snapshot", cfg.dump())
    print(d)


def _cmd_experiment(fn_name):
    def run(cfg, args):
        from . import experiments

        spec = experiments.ExperimentSpec.from_config(cfg)
        fn = getattr(experiments, fn_name)
        kw = {"mode": args.mode} if fn_name == "run_shuffle_ablation" else {}
        res = fn(spec, out_dir=cfg.out_dir(), workers=args.workers, **kw)
        print(res.out_dir)
    return run


def _cmd_speedup(cfg, args):
    from .experiments import SpeedupSpec, run_speedup_experiment

    res = run_speedup_experiment(SpeedupSpec.from_config(cfg), out_dir=cfg.out_dir(), workers=args.workers)
    print(res.out_dir)


def _cmd_verify(cfg, args):
    from .experiments import run_theory_verification

    rows, coeffs = run_theory_verification(_parse_grid(args.grid), samples=cfg["theory.samples"],
                                           seed=cfg["theory.seed"], workers=args.workers,
                                           out_dir=cfg.out_dir(), snapshot=cfg.dump())
    print(cfg.out_dir() / "verify-theory")
    failed = [r for r in rows + coeffs if r["pass"] != "pass"]
    if failed:
        log.error("%d grid row(s) failed verification", len(failed))
        return 2
    return 0


def _cmd_plot_data(cfg, args):
    from .experiments import csv_text, plot_series

    paths = []
    for p in map(Path, args.traces):
        if p.is_dir():
            paths.extend(sorted(p.rglob("*.jsonl")))
        elif p.exists():
            paths.append(p)
        else:
            raise ValidationError(f"trace path {str(p)!r} does not exist")
    sys.stdout.write(csv_text(("x", "y", "series"), plot_series(paths)))


COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "compare": _cmd_experiment("run_strategy_comparison"),
    "budget": _cmd_experiment("run_fixed_budget"),
    "sweep": _cmd_experiment("run_window_sweep"),
    "ablate": _cmd_experiment("run_shuffle_ablation"),
    "verify-theory": _cmd_verify,
    "speedup": _cmd_speedup,
    "plot-data": _cmd_plot_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        overrides = list(args.overrides)
        if getattr(args, "seed", None) is not None:
            overrides.append(f"synth.seed={args.seed}")
        if args.workers < 1:
            raise ValidationError(f"--workers must be >= 1, got {args.workers}")
        cfg = load_config(args.config, overrides)
        if args.command != "plot-data":
            cfg.out_dir()
        return int(COMMANDS[args.command](cfg, args) or 0)
    except (ConfigError, ValidationError) as exc:
        print(f"halstream: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("runtime failure", exc_info=True)
        print(f"halstream: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
