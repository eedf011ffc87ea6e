"""Command-line interface: seeded experiment runs and backend benchmarks.

Settings come from a flat ``key = value`` config file; a handful of flags
override individual entries.  ``run`` emits one report row per
(trial, time step, method), ``bench`` times one full-chain solve under each
available execution backend.
"""

from __future__ import annotations

import argparse
import re
import sys

from .bench import compare_backends, format_comparison
from .errors import SwsbpError, ValidationError
from .experiment import (
    METHODS,
    emit_report,
    report_to_csv,
    report_to_json,
    run_experiment,
)
from .scenario import ScenarioConfig

# config file key -> (ScenarioConfig field, value parser)
_SCENARIO_KEYS = {
    "scenario": ("kind", str),
    "d": ("num_states", int),
    "grid_size": ("grid_size", int),
    "sensors": ("num_sensors", int),
    "sensor_seed": ("sensor_seed", int),
    "lambda": ("decay", float),
    "wind_deg": ("wind_deg", float),
    "M": ("population", int),
    "T": ("horizon", int),
    "K": ("window", int),
    "seed": ("seed", int),
    "tol": ("tolerance", float),
    "max_sweeps": ("max_sweeps", int),
}
_RUN_KEYS = ("methods", "trials", "out", "format")
_REQUIRED_KEYS = ("scenario", "M", "T", "K")


def parse_config_file(path) -> dict:
    """Read a flat settings file: ``key = value`` lines, ``#`` comments."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise SwsbpError(f"cannot read config {path}: {exc}") from exc
    entries: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(
                f"{path}:{number}: expected 'key = value', got {raw.strip()!r}"
            )
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _SCENARIO_KEYS and key not in _RUN_KEYS:
            raise ValidationError(f"{path}:{number}: unknown key {key!r}")
        if key in entries:
            raise ValidationError(f"{path}:{number}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _scenario_from(entries: dict, args) -> ScenarioConfig:
    kwargs = {}
    for key, (field, convert) in _SCENARIO_KEYS.items():
        if key not in entries:
            continue
        try:
            kwargs[field] = convert(entries[key])
        except ValueError:
            raise ValidationError(
                f"config key {key!r}: cannot parse {entries[key]!r}"
            ) from None
    missing = [key for key in _REQUIRED_KEYS if _SCENARIO_KEYS[key][0] not in kwargs]
    if missing:
        raise ValidationError(f"config must set: {', '.join(missing)}")
    if args.K is not None:
        kwargs["window"] = args.K
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return ScenarioConfig(**kwargs)


def _split_methods(value: str) -> list[str]:
    return [name for name in re.split(r"[,\s]+", value) if name]


def _run(args) -> int:
    entries = parse_config_file(args.config)
    config = _scenario_from(entries, args)
    if args.method:
        methods = args.method
    elif "methods" in entries:
        methods = _split_methods(entries["methods"])
    else:
        methods = list(METHODS)
    if args.trials is not None:
        trials = args.trials
    else:
        try:
            trials = int(entries.get("trials", "1"))
        except ValueError:
            raise ValidationError(
                f"config key 'trials': cannot parse {entries['trials']!r}"
            ) from None
    out = args.out if args.out is not None else entries.get("out", "-")
    fmt = args.format if args.format is not None else entries.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ValidationError(f"format must be 'csv' or 'json', got {fmt!r}")

    report = run_experiment(
        config, methods=methods, trials=trials, oracle_check=args.oracle_check
    )
    if out == "-":
        text = report_to_csv(report) if fmt == "csv" else report_to_json(report)
        sys.stdout.write(text)
    else:
        emit_report(report, fmt, out)
        print(f"wrote {len(report.rows)} rows to {out}", file=sys.stderr)
    return 0


def _bench(args) -> int:
    results = compare_backends(
        num_states=args.d,
        horizon=args.T,
        population=args.M,
        seed=args.seed,
        repeats=args.repeats,
    )
    print(format_comparison(results))
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swsbp",
        description="Aggregate marginal inference on hidden Markov chains.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser(
        "run", help="run a seeded experiment and emit a report"
    )
    run.add_argument(
        "--config", required=True, help="flat 'key = value' settings file"
    )
    run.add_argument(
        "--method",
        action="append",
        choices=METHODS,
        help="method to run (repeatable; default: config 'methods' or all)",
    )
    run.add_argument("--K", type=int, help="window length override")
    run.add_argument("--seed", type=int, help="seed override")
    run.add_argument("--trials", type=int, help="trial count override")
    run.add_argument(
        "--oracle-check",
        action="store_true",
        help="certify the final full-chain marginals against the exact"
        " joint-tensor projection before writing the report",
    )
    run.add_argument(
        "--out", help="output path, '-' for stdout (default: config 'out' or '-')"
    )
    run.add_argument(
        "--format",
        choices=("csv", "json"),
        help="output format (default: config 'format' or csv)",
    )

    bench = commands.add_parser(
        "bench", help="time one full-chain solve under each backend"
    )
    bench.add_argument("--d", type=int, default=25, help="number of hidden states")
    bench.add_argument("--T", type=int, default=40, help="chain length")
    bench.add_argument("--M", type=int, default=10_000, help="population size")
    bench.add_argument("--repeats", type=int, default=3, help="best-of repeats")
    bench.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        return _bench(args)
    except SwsbpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
