"""Command line entry point: ``tariffgrid <subcommand> ...``.

Exit codes: 0 success, 1 finished with invariant problems or missing
stages, 2 invalid input or a failed stage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .powerflow import NetworkError, load_network, overload_events, run_timeseries, voltage_line_stats
from .scenario import StageError, run_scenario, validate_config
from .synth import write_fixture


def _add_common(p: argparse.ArgumentParser, needs_out: bool = True) -> None:
    p.add_argument("--config", required=True, help="scenario config (YAML)")
    p.add_argument("--tariff", nargs="+", metavar="NAME", help="restrict to these tariffs")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--days", type=int, help="simulate the first N days instead of the configured horizon")
    if needs_out:
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for per-building work")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tariffgrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("validate", help="check a config and list every problem"), needs_out=False)

    p = sub.add_parser("synth", help="write the desk-scale fixture data and config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--days", type=int, help="configure a first-N-days horizon instead of four weeks")

    _add_common(sub.add_parser("calibrate", help="optimise the reference tariffs and calibrate the others"))
    _add_common(sub.add_parser("run", help="full pipeline and report"))

    p = sub.add_parser("powerflow", help="power flow from a config, or standalone on a net-load file")
    p.add_argument("--config")
    p.add_argument("--network", help="network file for a standalone run")
    p.add_argument("--loads", help="CSV: timestamp plus one net-consumption column (kW) per building")
    p.add_argument("--out", required=True)
    p.add_argument("--tariff", nargs="+", metavar="NAME")
    p.add_argument("--seed", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--jobs", type=int, default=1)

    _add_common(sub.add_parser("report", help="write the report from cached stages only"))
    return parser


def _load(args):
    cfg, errors = validate_config(args.config, tariffs=args.tariff, days=args.days, seed=args.seed)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return None
    return cfg


def _print_stages(report) -> None:
    for stage, status, seconds in report.stages:
        print(f"{status:9s} {seconds:7.2f}s  {stage}")
    for p in report.problems:
        print(f"problem: {p}", file=sys.stderr)
    for m in report.missing:
        print(f"missing: {m}", file=sys.stderr)


def _standalone_powerflow(args) -> int:
    try:
        net = load_network(args.network)
    except NetworkError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    with open(args.loads, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print("error: empty load file", file=sys.stderr)
        return 2
    cols = [c for c in rows[0] if c != "timestamp"]
    unknown = [c for c in cols if c not in net.injections]
    if unknown:
        print(f"error: buildings without injection point: {', '.join(unknown)}", file=sys.stderr)
        return 2
    p = np.zeros((len(rows), len(net.buses)))
    for c in cols:
        p[:, net.bus_index(net.injections[c])] += [float(r[c]) for r in rows]
    result = run_timeseries(net, p)
    result.check_conservation()
    overload = overload_events(result.transformer_flow, net.transformer.rating)
    buses, lines = voltage_line_stats(result)
    os.makedirs(args.out, exist_ok=True)
    from .kpi import _write

    _write(os.path.join(args.out, "voltage_percentiles.csv"),
           ("bus", "p95_over", "p95_under", "n_over_1.1", "n_under_0.9"),
           [(s.bus_id, s.p95_over, s.p95_under, s.n_over_limit, s.n_under_limit) for s in buses])
    _write(os.path.join(args.out, "line_loading.csv"), ("line", "p95_loading", "max_loading", "n_overloaded"),
           [(s.line_id, s.p95_loading, s.max_loading, s.n_overloaded) for s in lines])
    _write(os.path.join(args.out, "transformer.csv"), ("timestamp", "flow_kw", "losses_kw"),
           [(r["timestamp"], f, l) for r, f, l in zip(rows, result.transformer_flow, result.losses)])
    _write(os.path.join(args.out, "overload_events.csv"),
           ("start", "duration_min", "peak_loading", "permissible", "violates_curve"),
           [(e.start, e.duration_min, e.peak_loading, e.permissible, e.violates_curve) for e in overload.events])
    print(f"{len(rows)} steps, {len(overload.events)} overload events, "
          f"voltage range {result.bus_voltage.min():.4f}..{result.bus_voltage.max():.4f} p.u.")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "synth":
        path = write_fixture(args.out, seed=args.seed, days=args.days)
        print(path)
        return 0

    if args.command == "powerflow" and args.network:
        if not args.loads:
            print("error: --network needs --loads", file=sys.stderr)
            return 2
        return _standalone_powerflow(args)
    if args.command == "powerflow" and not args.config:
        print("error: powerflow needs --config or --network/--loads", file=sys.stderr)
        return 2

    cfg = _load(args)
    if cfg is None:
        return 2
    if args.command == "validate":
        print(f"ok: {len(cfg.networks)} network(s), {len(cfg.tariffs)} tariffs, "
              f"{len(cfg.grid()) } steps of {cfg.grid().step_hours:g} h")
        return 0

    stop = {"calibrate": "calibrate", "powerflow": "powerflow"}.get(args.command)
    try:
        report = run_scenario(cfg, args.out, jobs=max(1, args.jobs), stop_after=stop,
                              compute_missing=args.command != "report")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_stages(report)
    if args.command == "calibrate":
        for tariff, per_net in report.calibrations.items():
            for name, res in per_net.items():
                detail = f"factor {res.factor:.6g}" if res.factor is not None else f"rate {res.uniform_rate:.6g}"
                print(f"{name}: {tariff}: {detail}")
    if report.report_files:
        print(f"report written to {os.path.abspath(args.out)}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
