"""``pt`` command line."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import PtError


def _cmd_trace(args) -> int:
    from .orchestration import control

    if args.action == "start":
        events = args.events or ["pt:*"]
        try:
            state = control.start(args.session, events, args.output_dir)
        except FileExistsError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        except PtError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except OSError as exc:
            print(f"error: cannot write session control file: {exc}", file=sys.stderr)
            return 1
        print(f"session {state['session_name']} started, writing to {state['output_dir']}")
        return 0
    if args.action == "stop":
        try:
            result = control.stop()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if result is None:
            print("no active session", file=sys.stderr)
            return 1
        state, (events, dropped, files) = result
        print(f"session {state['session_name']} stopped")
        print(f"{events} events recorded")
        print(f"{dropped} events dropped across {files} trace file(s)")
        return 0
    state = control.status()
    if state is None:
        print("no active session")
        return 0
    print(f"session {state['session_name']} recording")
    print(f"events: {', '.join(state['events'])}")
    print(f"output: {state['output_dir']}")
    return 0


def _cmd_launch(args) -> int:
    from .orchestration import launch, load_launch

    try:
        doc = load_launch(args.file)
        report = launch(doc, timeout=args.timeout)
    except PtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in report.processes:
        line = f"{p.fixture} pid={p.pid} exit={p.exit_code} {p.status}"
        if p.trace_file:
            line += f" trace={p.trace_file} dropped={p.dropped}"
        print(line)
    return 0 if report.ok else 1


def _cmd_run(args) -> int:
    from .fixtures import main as fixture_main

    return fixture_main([args.fixture, *args.args])


def _cmd_analyze(args) -> int:
    from .analysis.report import write_report
    from .trace_io import merge_files

    try:
        _, events = merge_files(args.input)
        rj, sc = write_report(args.report, events, args.timer)
    except (PtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{len(events)} events analyzed")
    print(f"wrote {rj} and {sc}")
    return 0


def _cmd_export(args) -> int:
    from .trace_io import export_json, merge_files

    try:
        _, events = merge_files(args.input)
    except (PtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    text = export_json(events)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    from . import bench

    try:
        cfg = bench.BenchConfig(args.rates, args.sizes, args.duration_s, args.warmup_s,
                                realtime=not args.no_realtime, paired=not args.contiguous)
    except PtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    def progress(c):
        flag = "" if c.valid else " OVERRUN"
        print(f"{c.rate_hz:>5} Hz {c.size_kib:>4} KiB {'all' if c.tracing else 'off':>3}: "
              f"mean {c.mean / 1e3:8.1f} us  p99 {c.p99 / 1e3:8.1f} us  n={len(c.latencies_ns)}{flag}",
              flush=True)

    result = bench.run_bench(cfg, args.out, progress)
    doc = result["doc"]
    print(f"emit cost {doc['emit_cost_ns']:.0f} ns, estimate for 10 tracepoints "
          f"{doc['estimate_ns']:.0f} ns")
    for c in doc["overhead"]["cells"]:
        print(f"{c['rate_hz']:>5} Hz {c['size_kib']:>4} KiB: +{c['absolute_ns'] / 1e3:.1f} us "
              f"({100 * c['relative']:.1f}%)")
    o = result["overhead"]
    print(f"pooled traced-untraced mean {o.mean_difference_ns:.0f} ns")
    if args.out:
        print(f"wrote {Path(args.out) / 'bench.json'} and {Path(args.out) / 'bench.csv'}")
    if args.json:
        print(json.dumps(doc["overhead"], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pt", description="Tracing for the pttrace runtime.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("trace", help="start, stop or inspect a tracing session")
    t.add_argument("action", choices=["start", "stop", "status"])
    t.add_argument("--session", default="pt-session")
    t.add_argument("--events", action="append", metavar="PATTERN",
                   help="enable pattern such as 'pt:*' (repeatable)")
    t.add_argument("--output-dir", default=".")
    t.set_defaults(func=_cmd_trace)

    la = sub.add_parser("launch", help="run a JSON launch document")
    la.add_argument("file")
    la.add_argument("--timeout", type=float, default=None, help="per-process timeout (s)")
    la.set_defaults(func=_cmd_launch)

    r = sub.add_parser("run", help="run one bundled fixture in this process")
    r.add_argument("fixture")
    r.add_argument("args", nargs=argparse.REMAINDER)
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("analyze", help="rebuild the model and compute metrics")
    a.add_argument("--input", nargs="+", required=True, metavar="FILE")
    a.add_argument("--report", required=True, metavar="DIR")
    a.add_argument("--timer", metavar="SYMBOL", help="restrict timer stats to this callback")
    a.set_defaults(func=_cmd_analyze)

    e = sub.add_parser("export", help="merge trace files and print NDJSON")
    e.add_argument("input", nargs="+")
    e.add_argument("-o", "--output")
    e.set_defaults(func=_cmd_export)

    b = sub.add_parser("bench", help="latency overhead benchmark")
    b.add_argument("--rates", type=int, nargs="+", default=[100, 500, 1000, 2000])
    b.add_argument("--sizes", type=int, nargs="+", default=[1, 32, 64, 256])
    b.add_argument("--duration-s", type=float, default=30.0)
    b.add_argument("--warmup-s", type=float, default=2.0)
    b.add_argument("--out", default=None)
    b.add_argument("--no-realtime", action="store_true")
    b.add_argument("--contiguous", action="store_true",
                   help="run each condition as its own block instead of interleaving messages")
    b.add_argument("--json", action="store_true", help="also print the overhead summary")
    b.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
