"""Command-line entry point.

Subcommands: ``run <config>`` executes an experiment file, ``presets``
lists the bundled benchmark presets, ``verify`` runs the invariant
suite, and ``curve <trace-dir> --horizons a,b,c`` prints the
movement-regret table computed from previously emitted trace CSVs.
"""
from __future__ import annotations

import argparse
import sys

from .harness import emit_movement_regret_curve, load_traces, parse_config, run_experiment
from .objectives import preset, preset_names


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    files = run_experiment(cfg, workers=args.workers)
    for path in files:
        print(path)
    return 0


def _cmd_presets(args) -> int:
    for name in preset_names():
        p = preset(name)
        dims = [m.dimension for m in p.modules]
        print(
            f"{name}: objective {p.objective.name}, split {list(p.split)}, "
            f"module dims {dims}, switching costs {list(p.costs)}, lambda {p.lam}"
        )
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_checks

    failures = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    if failures:
        print(f"{failures} check(s) failed")
    return 1 if failures else 0


def _cmd_curve(args) -> int:
    horizons = [int(part) for part in args.horizons.split(",") if part.strip()]
    traces = load_traces(args.trace_dir, n_init=args.n_init)
    table = emit_movement_regret_curve(traces, horizons)
    print("method,horizon,mean,stderr,runs")
    for row in table:
        print(
            f"{row['method']},{row['horizon']},{row['mean']!r},"
            f"{row['stderr']!r},{row['runs']}"
        )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lambo",
        description="Switch-cost-aware Bayesian optimization benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a YAML config")
    p_run.add_argument("config", help="path to the experiment config file")
    p_run.add_argument(
        "--workers",
        type=int,
        default=None,
        help="replication worker processes (default: LAMBO_WORKERS or 1)",
    )
    p_run.set_defaults(fn=_cmd_run)

    p_presets = sub.add_parser("presets", help="list the bundled benchmark presets")
    p_presets.set_defaults(fn=_cmd_presets)

    p_verify = sub.add_parser("verify", help="run the quick invariant suite")
    p_verify.set_defaults(fn=_cmd_verify)

    p_curve = sub.add_parser(
        "curve", help="movement-regret table from a directory of trace CSVs"
    )
    p_curve.add_argument("trace_dir", help="directory holding *_runNNN.csv files")
    p_curve.add_argument(
        "--horizons", required=True, help="comma-separated horizons, e.g. 250,500,1000"
    )
    p_curve.add_argument(
        "--n-init",
        type=int,
        default=None,
        help="initialization samples per trace (default: read from summary.json)",
    )
    p_curve.set_defaults(fn=_cmd_curve)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
