"""Command-line driver: run one scenario or a sweep and write the CSV reports.

Exit status is 0 on success, 1 for query, flag or config-file errors and
2 when the requested sizing is infeasible.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .apps import SizingParams, compute_parallel_degree
from .events import US_PER_S
from .query import PatternQuery, QuerySyntaxError, _Parser, format_query, parse_query
from .workload import (
    METHODS,
    ConfigError,
    RateProfile,
    Scenario,
    ServiceModel,
    WorkloadSpec,
    calibrate,
    load_scenario,
    run_cell,
    sweep,
    with_parameter,
    write_reports,
)

log = logging.getLogger("parcep")

DEFAULT_QUERY = "PATTERN SEQ(E1, E2) WHERE [Id] WITHIN 1 s"


class InfeasibleSizing(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parcep", description="Parallel pattern matching benchmark.")
    p.add_argument("--config", help="scenario INI file; flags given here override it")
    p.add_argument("--query", help="query text, or a path to a file holding it")
    p.add_argument("--method", choices=METHODS, help="dispatch method (default: apps)")
    p.add_argument("--all-methods", action="store_true", help="run rr, jsq, llsf and apps on the same input")
    p.add_argument("--m", help="number of workers, or 'auto' to size from the utilization threshold")
    p.add_argument("--max-m", type=int, default=64, help="largest worker count 'auto' may choose")
    p.add_argument("--delta", type=float, help="utilization threshold (default 0.9)")
    p.add_argument("--beta", type=float, help="MSE bound for the segment trade-off (default: calibrated)")
    p.add_argument("--tau", type=int, help="longest batch horizon in events (default 1000)")
    p.add_argument("--rate", help="events/s per stream; a comma list gives a ramp of equal phases")
    p.add_argument("--window", help="override the query window, e.g. 1s or 500ms")
    p.add_argument("--sweep", help="parameter=v1,v2,... with parameter 'window' (s) or 'rate' (events/s)")
    p.add_argument("--duration", type=float, help="simulated seconds (default 10)")
    p.add_argument("--keys", type=int, help="distinct key values")
    p.add_argument("--skew", type=float, help="Zipf exponent of the key distribution")
    p.add_argument("--service-ms", type=float, help="base service time per event")
    p.add_argument("--per-item-ms", type=float, help="extra service time per buffered replica")
    p.add_argument("--per-match-ms", type=float, help="extra service time per match")
    p.add_argument("--slowdown", help="per-host service multipliers, e.g. 3,1")
    p.add_argument("--capacity", type=int, help="bounded queue length per worker (default 64)")
    p.add_argument("--seed", type=int, help="seed for streams and service draws")
    p.add_argument("--mode", choices=("virtual", "wallclock"), help="virtual time (default) or worker threads")
    p.add_argument("--time-scale", type=float, default=0.0, help="wallclock mode: real seconds per simulated second")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--calibrate", action="store_true", help="print the calibrated service rate and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def read_query(text: str) -> PatternQuery:
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    return parse_query(text.strip())


def parse_duration(text: str) -> int:
    """``1s``, ``500 ms`` or a bare number of seconds, as microseconds."""
    parser = _Parser(text.strip())
    value = parser.duration()
    if parser.tok.kind != "eof":
        raise parser.error(f"unexpected trailing input {parser.tok.text!r}")
    return value


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def build_scenario(args: argparse.Namespace) -> Scenario:
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        sc = load_scenario(args.config)
    else:
        sc = Scenario(parse_query(DEFAULT_QUERY), methods=("apps",))
    if args.query:
        sc = replace(sc, query=read_query(args.query))
    if args.window:
        q = sc.query
        sc = replace(sc, query=PatternQuery(q.pattern, parse_duration(args.window), q.where_key))
    wl = sc.workload
    if args.rate:
        rates = _floats(args.rate)
        wl = replace(wl, rate_profile=RateProfile(tuple(rates)))
    if args.duration is not None:
        wl = replace(wl, duration=args.duration)
    if args.keys is not None:
        wl = replace(wl, key_cardinality=args.keys)
    if args.skew is not None:
        wl = replace(wl, key_skew=args.skew)
    if args.seed is not None:
        wl = replace(wl, seed=args.seed)
    sv = sc.service
    if args.service_ms is not None:
        sv = replace(sv, base=args.service_ms / 1000.0)
    if args.per_item_ms is not None:
        sv = replace(sv, per_item=args.per_item_ms / 1000.0)
    if args.per_match_ms is not None:
        sv = replace(sv, per_match=args.per_match_ms / 1000.0)
    if args.slowdown:
        sv = replace(sv, slowdown=tuple(_floats(args.slowdown)))
    if args.seed is not None:
        sv = replace(sv, seed=args.seed)
    methods = sc.methods
    if args.all_methods:
        methods = METHODS
    elif args.method:
        methods = (args.method,)
    m = sc.m
    if args.m is not None:
        m = None if args.m == "auto" else int(args.m)
    updates = dict(workload=wl, service=sv, methods=methods, m=m)
    for name in ("delta", "beta", "tau", "mode"):
        if getattr(args, name) is not None:
            updates[name] = getattr(args, name)
    if args.capacity is not None:
        updates["queue_capacity"] = args.capacity
    sc = replace(sc, **updates)
    sc.time_scale = args.time_scale
    return sc


def check_sizing(sc: Scenario, max_m: int) -> Scenario:
    """Resolve ``m='auto'`` and reject layouts that cannot reach a steady state.

    Only the base service cost is known before the run, so this is a lower
    bound on the real load.
    """
    params: SizingParams = sc.sizing()
    rate = max(sc.workload.rate_profile.rates)
    if sc.m is None:
        m = compute_parallel_degree(replace(params, lam=rate))
        if m > max_m:
            raise InfeasibleSizing(f"rate {rate:g}/s needs m={m} workers at delta={sc.delta}, above --max-m {max_m}")
        log.info("auto-sized m=%d", m)
        return replace(sc, m=m)
    rho = rate / (sc.m * params.mu)
    if rho >= 1:
        raise InfeasibleSizing(f"utilization {rho:.3f} >= 1 with m={sc.m}: base service cost alone saturates")
    return sc


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        sc = build_scenario(args)
        if args.calibrate:
            cal = calibrate(sc.service)
            print(f"mu={cal.mu:.3f} events/s  t_ps={cal.t_ps * 1000:.4f} ms")
            return 0
        sc = check_sizing(sc, args.max_m)
        if args.sweep:
            name, sep, values = args.sweep.partition("=")
            if not sep or name not in ("window", "rate"):
                raise ConfigError("--sweep expects window=... or rate=...")
            vals = [float(x) for x in values.split(",") if x.strip()]
            if not vals:
                raise ConfigError("--sweep needs at least one value")
            for v in vals:
                check_sizing(with_parameter(sc, name, v), args.max_m)
            reports = sweep(name, vals, sc)
        else:
            reports = run_cell(sc)
    except (QuerySyntaxError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleSizing as exc:
        print(f"infeasible sizing: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    paths = write_reports(reports, args.out)
    log.info("query: %s", format_query(sc.query))
    print(open(paths["summary.txt"], encoding="utf-8").read(), end="")
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
