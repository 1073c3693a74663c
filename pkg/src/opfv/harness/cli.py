"""Command line: ``opfv {fope,fopl,tune,sweep,gen-data} [--config F] [--override k=v] ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from ..exceptions import ConfigError
from . import plot
from .config import load_config, seed_list
from .report import emit_report
from .runner import env_overrides, run_fope, run_fopl, run_sweep, run_tune
from ..env import make_env
from ..tuning import SCORE_COLUMNS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to exit code 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opfv", description="Future off-policy evaluation and learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("fope", "estimate future policy values with every configured estimator"),
        ("fopl", "train every configured learner and score the learned policies"),
        ("tune", "print the time-feature tuning scores"),
        ("sweep", "run the configured sweep"),
        ("gen-data", "sample a logged dataset and write it as CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (merged onto the defaults)")
        p.add_argument("--seed", type=int, help="first data seed (seed_offset)")
        p.add_argument("--out", help="output directory (gen-data: CSV file or directory)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, value parsed as JSON; repeatable")
        p.add_argument("--plot", action="store_true", help="also write SVG charts of the aggregates")
    return parser


def _resolve(args) -> dict:
    mode = {"gen-data": "fope"}.get(args.command, args.command)
    config = load_config(args.config, [f"mode={mode}"] + list(args.override))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        config["seed_offset"] = args.seed
        if isinstance(config["seeds"], list):
            config["seeds"] = [s + args.seed for s in config["seeds"]]
    if args.out is not None:
        config["output"]["dir"] = args.out
    if args.plot:
        config["output"]["plot"] = True
    return config


def _summary(report, stream) -> None:
    for r in report.agg:
        stream.write(f"{r['method']:<24} {str(r['sweep_value']):>14}  mse={r['mse']:.6g}  bias2={r['bias2']:.6g}  "
                     f"var={r['var']:.6g}  n_seeds={r['n_seeds']}  failed={r['n_failed']}\n")


def _run(args) -> int:
    config = _resolve(args)
    out = Path(config["output"]["dir"])
    if args.command == "gen-data":
        env_seed, overrides = env_overrides(config)
        data = make_env(env_seed, overrides).sample_logged_data(config["n"], seed_list(config)[0])
        path = out if out.suffix == ".csv" else out / "data.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        data.to_csv(path)
        print(f"wrote {data.n_rounds} records to {path}")
        return EXIT_OK
    if args.command == "tune":
        rows = run_tune(config)
        columns = ("target_time",) + tuple(SCORE_COLUMNS)
        writer = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "tune.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return EXIT_OK
    runner = {"fope": run_fope, "fopl": run_fopl, "sweep": run_sweep}[args.command]
    report = runner(config)
    files = emit_report(report, out)
    if config["output"].get("plot"):
        axis = report.rows[0]["sweep_axis"] if report.rows else "sweep value"
        plot.write_plots(report.agg, out, axis)
    _summary(report, sys.stdout)
    print(f"wrote {', '.join(str(p) for p in files.values())}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
