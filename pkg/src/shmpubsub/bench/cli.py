"""``bench`` command line: run one scenario, sweep the matrix, aggregate CSVs."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..transport.message import TransportKind
from .report import emit_csv, emit_plot_script, emit_summary, emit_table, load_report
from .runner import run_scenario
from .scenario import DEFAULT_COUNT, DEFAULT_RATE, DEFAULT_SWEEP, DEFAULT_WARMUP, Graph, Scenario, parse_size
from .system import parse_pin_map


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--count", type=int, default=DEFAULT_COUNT, help="messages per publisher")
    p.add_argument("--rate", type=float, default=DEFAULT_RATE, help="publish rate in Hz")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP, help="leading messages excluded from stats")
    p.add_argument("--ordered", action="store_true", help="enforce subscriber connection order")
    p.add_argument("--pin", default="", help="role=core list, e.g. pub=2,sub0=3")
    p.add_argument("--nodelay", action="store_true", help="set TCP_NODELAY on TCP connections")
    p.add_argument("--segment", default=None, help="use an existing segment by name")
    p.add_argument("--segment-size", type=parse_size, default=None, help="size of the segment created for the run")
    p.add_argument("--label", default="", help="free-form environment label stored in the CSV")
    p.add_argument("--capacity", type=int, default=16, help="per-subscriber queue capacity")
    p.add_argument("--registry", default=None, help="registry socket of an already running registry")
    p.add_argument("--timeout", type=float, default=None, help="hard limit for the whole run in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Pub/sub transport latency benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--graph", choices=[g.value for g in Graph], default=Graph.ONE_PUB_ONE_SUB.value)
    run.add_argument("--transport", choices=[t.value for t in TransportKind], default=TransportKind.SHM.value)
    run.add_argument("--payload", type=parse_size, default=1 << 20, help="payload bytes (suffixes k, M accepted)")
    run.add_argument("--csv", default=None, help="write per-message records to this CSV")
    _add_common(run)

    sweep = sub.add_parser("sweep", help="run every graph x transport x payload combination")
    sweep.add_argument("--graphs", default=",".join(g.value for g in Graph))
    sweep.add_argument("--transports", default=",".join(t.value for t in TransportKind))
    sweep.add_argument("--payloads", default=",".join(str(s) for s in DEFAULT_SWEEP))
    sweep.add_argument("--out", default="bench-results", help="directory for the CSV files")
    sweep.add_argument("--plot-script", default=None, help="also write a plotting script here")
    _add_common(sweep)

    rep = sub.add_parser("report", help="summarize CSV files")
    rep.add_argument("csv", nargs="+")
    rep.add_argument("--detail", action="store_true", help="print the per-pair summary of every file")
    rep.add_argument("--plot-script", default=None, help="write a plotting script for these CSVs")
    rep.add_argument("--plot-output", default="latency.png")
    return parser


def _scenario(args, graph, transport, payload, sweep=DEFAULT_SWEEP) -> Scenario:
    return Scenario(
        graph=graph, transport=transport, payload_size=payload,
        message_count=args.count, rate_hz=args.rate, ordered=args.ordered,
        pin_map=parse_pin_map(args.pin), nodelay=args.nodelay,
        environment_label=args.label, warmup=args.warmup, capacity=args.capacity,
        segment_size=args.segment_size, sweep=sweep,
    )


def _run(args, sc: Scenario):
    return run_scenario(sc, registry_path=args.registry, segment_name=args.segment, timeout=args.timeout)


def cmd_run(args) -> int:
    sweep = DEFAULT_SWEEP if args.payload in DEFAULT_SWEEP else DEFAULT_SWEEP + (args.payload,)
    sc = _scenario(args, args.graph, args.transport, args.payload, sweep)
    report = _run(args, sc)
    if args.csv:
        emit_csv(report, args.csv)
    print(emit_summary(report))
    if args.csv:
        print(f"csv {args.csv}")
    return 1 if report.failed else 0


def cmd_sweep(args) -> int:
    graphs = [g for g in args.graphs.split(",") if g]
    transports = [t for t in args.transports.split(",") if t]
    payloads = [parse_size(p) for p in args.payloads.split(",") if p]
    sweep = tuple(sorted(set(DEFAULT_SWEEP) | set(payloads)))
    os.makedirs(args.out, exist_ok=True)
    reports = []
    failed = 0
    for graph in graphs:
        for transport in transports:
            for payload in payloads:
                sc = _scenario(args, graph, transport, payload, sweep)
                report = _run(args, sc)
                emit_csv(report, os.path.join(args.out, sc.label() + ".csv"))
                reports.append(report)
                failed += report.failed
                print(emit_table([report]).splitlines()[-1], flush=True)
    print()
    print(emit_table(reports))
    if args.plot_script:
        emit_plot_script(reports, args.plot_script)
        print(f"plot script {args.plot_script}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.csv]
    if args.detail:
        for r in reports:
            print(emit_summary(r))
            print()
    print(emit_table(reports))
    if args.plot_script:
        emit_plot_script(reports, args.plot_script, args.plot_output)
        print(f"plot script {args.plot_script}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}[args.command](args)
    except ValueError as e:
        print(f"bench: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
