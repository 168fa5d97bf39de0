"""report.json / samples.csv writers.

Output is a pure function of the events: keys are sorted, rows are
ordered by (kind, subject, start_ns) and floats are rounded so repeated
runs on one trace are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Sequence

from ..errors import PtError, UnknownTimer
from ..trace_model import TraceEvent
from .metrics import (Summary, callback_instances, io_linkage, message_latencies,
                      timer_stats)
from .model import SystemModel, build_model

CSV_HEADER = ("kind", "subject", "start_ns", "value_ns")


class IoFailure(PtError, OSError):
    """Report files could not be written."""


def _round(summary: Summary) -> dict:
    d = summary.as_dict()
    return {k: (round(v, 3) if isinstance(v, float) else v) for k, v in d.items()}


def _model_dict(m: SystemModel) -> dict:
    return {
        "counts": m.counts(),
        "nodes": [{"handle": n.handle, "name": n.name, "namespace": n.namespace}
                  for n in sorted(m.nodes.values(), key=lambda n: n.handle)],
        "publishers": [{"handle": p.handle, "node": m.node_name(p.node), "topic": p.topic}
                       for p in sorted(m.publishers.values(), key=lambda p: p.handle)],
        "subscriptions": [{"handle": s.handle, "node": m.node_name(s.node), "topic": s.topic,
                           "callback": s.callback, "symbol": s.symbol}
                          for s in sorted(m.subscriptions.values(), key=lambda s: s.handle)],
        "timers": [{"handle": t.handle, "node": m.node_name(t.node), "period_ns": t.period_ns,
                    "callback": t.callback, "symbol": t.symbol}
                   for t in sorted(m.timers.values(), key=lambda t: t.handle)],
        "services": [{"handle": s.handle, "node": m.node_name(s.node), "name": s.name,
                      "symbol": s.symbol}
                     for s in sorted(m.services.values(), key=lambda s: s.handle)],
        "lifecycle_machines": [{"handle": lc.handle, "node": m.node_name(lc.node),
                                "state": lc.state,
                                "transitions": [[ts, a, b] for ts, a, b in lc.transitions]}
                               for lc in sorted(m.lifecycles.values(), key=lambda x: x.handle)],
    }


def _timer_subject(t) -> str:
    return t.symbol or f"timer:{t.handle}"


def analyze(events: Sequence[TraceEvent], timer_symbol: str | None = None) -> dict:
    """Run every analysis; returns ``{"report": dict, "rows": csv rows}``."""
    model = build_model(events)
    pairing = callback_instances(model, events)
    lat = message_latencies(model, events)

    timers = sorted(model.timers.values(), key=lambda t: t.handle)
    if timer_symbol is not None:
        chosen = model.timer_by_symbol(timer_symbol)
        if chosen is None:
            raise UnknownTimer(f"no timer with callback symbol {timer_symbol!r}")
        timers = [chosen]

    rows: list[tuple[str, str, int, int]] = []
    timer_out = []
    for t in timers:
        if t.callback is None:
            continue
        st = timer_stats(model, events, t, pairing)
        subject = _timer_subject(t)
        starts = [i.start_ns for i in st.instances]
        rows += [("interval", subject, s, v) for s, v in zip(starts[1:], st.intervals_ns)]
        rows += [("duration", subject, i.start_ns, i.duration_ns) for i in st.instances]
        entry = {"timer": subject, "period_ns": t.period_ns, "instances": len(st.instances),
                 "interval": _round(st.interval_summary),
                 "duration": _round(st.duration_summary)}
        if timer_symbol is not None:
            links = io_linkage(model, events, t, pairing)
            entry["io_linkage"] = [
                {"start_ns": k.start_ns, "inputs": dict(sorted(k.inputs.items())),
                 "input_ages_ns": dict(sorted(k.input_ages_ns.items())), "output": k.output}
                for k in links]
        timer_out.append(entry)

    by_path: dict[str, list[int]] = {}
    for s in lat.samples:
        pub = model.publishers[s.publisher]
        sub = model.subscriptions[s.subscription]
        subject = f"{pub.topic}:{model.node_name(pub.node)}->{model.node_name(sub.node)}"
        rows.append(("latency", subject, s.publish_ns, s.latency_ns))
        by_path.setdefault(subject, []).append(s.latency_ns)

    cb_durations: dict[str, list[int]] = {}
    for inst in pairing.instances:
        sym = model.symbols.get(inst.callback, f"callback:{inst.callback}")
        cb_durations.setdefault(sym, []).append(inst.duration_ns)

    rows.sort()
    report = {
        "event_count": len(events),
        "model": _model_dict(model),
        "callbacks": {k: _round(Summary.of(v)) for k, v in sorted(cb_durations.items())},
        "timers": timer_out,
        "latency": {k: _round(Summary.of(v)) for k, v in sorted(by_path.items())},
        "diagnostics": sorted(model.diagnostics) + sorted(pairing.diagnostics)
        + sorted(lat.diagnostics),
    }
    return {"report": report, "rows": rows}


def render(result: dict) -> tuple[str, str]:
    text = json.dumps(result["report"], indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(result["rows"])
    return text, buf.getvalue()


def write_report(out_dir: str | os.PathLike, events: Sequence[TraceEvent],
                 timer_symbol: str | None = None) -> tuple[Path, Path]:
    result = analyze(events, timer_symbol)
    report_json, samples_csv = render(result)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json)
        (out / "samples.csv").write_text(samples_csv)
    except OSError as exc:
        raise IoFailure(f"could not write report to {out}: {exc}") from exc
    return out / "report.json", out / "samples.csv"
