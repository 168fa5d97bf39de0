"""Latency benchmark with tracing off and on.

One publisher node and one subscription node share a process.  The
publisher thread stamps ``monotonic_ns`` into the first 8 bytes of each
message right before ``publish``; the subscription callback reads the
clock on entry.  That difference is the sample, measured the same way in
both conditions, so the tracer is purely the treatment variable.

``run_bench`` interleaves the two conditions message by message inside
one run by default (``run_paired_cell``): latency on a shared or
virtualized host drifts by tens of percent over seconds, far more than
the effect being measured, and pairing cancels that drift.  Untraced
messages go through the discard function, exactly as with no session.
"""

from __future__ import annotations

import csv
import gc
import json
import os
import struct
import tempfile
import threading
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import recorder
from .errors import CellMismatch, EmptyInput, InvalidConfig
from .runtime import Context, SingleThreadedExecutor
from .trace_model import TracepointId as TP

_stamp = struct.Struct("<QB")  # send time, traced flag
_monotonic_ns = time.monotonic_ns

# overrun: the publisher finishes later than this fraction of the cell
# duration (and at least OVERRUN_PERIODS periods) behind schedule; a
# single stall that it recovers from does not count
OVERRUN_FRACTION = 0.05
OVERRUN_PERIODS = 10
CSV_COLUMNS = ("cell", "rate_hz", "size_kib", "tracing", "mean_ns", "std_ns", "p50_ns", "p99_ns")


@dataclass
class BenchConfig:
    rates_hz: list[int] = field(default_factory=lambda: [100, 500, 1000, 2000])
    sizes_kib: list[int] = field(default_factory=lambda: [1, 32, 64, 256])
    duration_s: float = 30.0
    warmup_s: float = 2.0
    realtime: bool = True
    paired: bool = True  # interleave the two conditions message by message
    seed: int = 0

    def __post_init__(self):
        if not self.rates_hz or not self.sizes_kib:
            raise InvalidConfig("rates and sizes must be non-empty")
        if any(r <= 0 for r in self.rates_hz) or any(s <= 0 for s in self.sizes_kib):
            raise InvalidConfig("rates and sizes must be positive")
        if not 0 <= self.warmup_s < self.duration_s:
            raise InvalidConfig("need 0 <= warmup_s < duration_s")


@dataclass
class CellResult:
    rate_hz: int
    size_kib: int
    tracing: bool
    latencies_ns: list[int]
    mean: float
    std: float
    p50: float
    p99: float
    published: int = 0
    delivered: int = 0
    overrun: bool = False
    trace_path: str | None = None

    @property
    def valid(self) -> bool:
        return not self.overrun

    @property
    def key(self) -> tuple[int, int]:
        return (self.rate_hz, self.size_kib)

    def row(self) -> dict:
        return {"cell": f"{self.rate_hz}Hz-{self.size_kib}KiB", "rate_hz": self.rate_hz,
                "size_kib": self.size_kib, "tracing": "all" if self.tracing else "off",
                "mean_ns": round(self.mean, 1), "std_ns": round(self.std, 1),
                "p50_ns": round(self.p50, 1), "p99_ns": round(self.p99, 1)}


@dataclass
class CellOverhead:
    rate_hz: int
    size_kib: int
    absolute_ns: float
    relative: float  # fraction of the untraced mean


@dataclass
class OverheadResult:
    cells: list[CellOverhead]
    untraced_mean_ns: float
    traced_mean_ns: float
    untraced_iqr_ns: tuple[float, float]
    traced_iqr_ns: tuple[float, float]
    samples: tuple[int, int]

    @property
    def mean_difference_ns(self) -> float:
        return self.traced_mean_ns - self.untraced_mean_ns


def _stats(samples: list[int]) -> tuple[float, float, float, float]:
    if not samples:
        return 0.0, 0.0, 0.0, 0.0
    a = np.asarray(samples, dtype=np.float64)
    std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
    return float(a.mean()), std, float(np.percentile(a, 50)), float(np.percentile(a, 99))


def try_realtime(priority: int = 10) -> bool:
    """Ask for SCHED_FIFO; warn and keep the default policy when refused."""
    try:
        os.sched_setscheduler(0, os.SCHED_FIFO, os.sched_param(priority))
        return True
    except (AttributeError, PermissionError, OSError) as exc:
        warnings.warn(f"real-time scheduling unavailable ({exc}); using default policy",
                      RuntimeWarning, stacklevel=2)
        return False


def _check_cell(rate_hz, size_kib, duration_s, warmup_s) -> None:
    if rate_hz <= 0 or size_kib <= 0 or not 0 <= warmup_s < duration_s:
        raise InvalidConfig("bad cell parameters")


def _start_session(trace_dir, name: str, n: int) -> tuple[recorder.Session, Path]:
    tdir = Path(trace_dir) if trace_dir is not None else Path(tempfile.mkdtemp(prefix="ptbench-"))
    path = tdir / f"{name}.ptrc"
    # receive side: 7 hot-path events, callback_end and ~3 executor events per message
    cap = max(recorder.MIN_CAPACITY, 16 * n + 1024)
    return recorder.session_start(recorder.SessionConfig("bench", ["pt:*"], cap, path)), path


def _drive(rate_hz: int, size_kib: int, n: int, duration_s: float,
           arms: np.ndarray | None, session: recorder.Session | None) -> dict:
    """Publish ``n`` stamped messages at ``rate_hz`` and time their delivery.

    With ``arms`` given (one bool per message, True = traced), the
    publisher routes the tracer to the session or to the discard function
    right before stamping each message.  A sample is marked unclean when
    the route changed again before its callback ran, i.e. part of its
    receive path ran under the other condition.
    """
    period = 1_000_000_000 // rate_hz
    nbytes = max(size_kib * 1024, _stamp.size)
    discard = recorder._discard
    traced_emit = session.emit if session is not None else discard

    ctx = Context()
    pub_node = ctx.create_node("bench_publisher")
    sub_node = ctx.create_node("bench_subscriber")
    pub = pub_node.create_publisher("bench", queue_depth=1000)
    sent = np.zeros(n, dtype=np.int64)
    lat = np.zeros(n, dtype=np.int64)
    arm = np.zeros(n, dtype=bool)
    clean = np.ones(n, dtype=bool)
    count = [0]
    dispatch = recorder.tracer

    def on_message(msg):
        now = _monotonic_ns()
        i = count[0]
        t0, flag = _stamp.unpack_from(msg)
        sent[i] = t0
        lat[i] = now - t0
        if arms is not None:
            arm[i] = flag
            clean[i] = (dispatch.emit is traced_emit) == bool(flag)
        count[0] = i + 1

    sub_node.create_subscription("bench", on_message, queue_depth=1000, symbol="bench_callback")
    executor = SingleThreadedExecutor()
    executor.add_node(sub_node)

    overrun = [False]
    stop = threading.Event()

    def publisher():
        buf = bytearray(nbytes)
        start = _monotonic_ns() + 1_000_000
        for k in range(n):
            due = start + k * period
            now = _monotonic_ns()
            if now < due:
                time.sleep((due - now) / 1e9)
            flag = 0
            if arms is not None:
                flag = int(arms[k])
                dispatch.emit = traced_emit if flag else discard
            _stamp.pack_into(buf, 0, _monotonic_ns(), flag)
            pub.publish(buf)
            if stop.is_set():
                break
        late = _monotonic_ns() - (start + (n - 1) * period)
        if late > max(OVERRUN_FRACTION * duration_s * 1e9, OVERRUN_PERIODS * period):
            overrun[0] = True

    gc_was = gc.isenabled()
    gc.collect()
    gc.disable()
    th = threading.Thread(target=publisher, name="bench-publisher", daemon=True)
    try:
        th.start()
        # exact message count; the deadline guards against a stuck run
        executor.spin(work_count=n, duration_s=duration_s * 3 + 5)
    finally:
        stop.set()
        th.join()
        if session is not None:
            dispatch.emit = session.emit
        if gc_was:
            gc.enable()
        ctx.shutdown()

    got = count[0]
    return {"sent": sent[:got], "lat": lat[:got], "arm": arm[:got], "clean": clean[:got],
            "got": got, "overrun": overrun[0] or got < n}


def _cell(rate_hz, size_kib, tracing, samples, n, drive, trace_path) -> CellResult:
    mean, std, p50, p99 = _stats(samples)
    return CellResult(rate_hz, size_kib, tracing, samples, mean, std, p50, p99,
                      published=n, delivered=drive["got"], overrun=drive["overrun"],
                      trace_path=str(trace_path) if trace_path else None)


def run_cell(rate_hz: int, size_kib: int, tracing: bool, duration_s: float, warmup_s: float,
             *, trace_dir: str | os.PathLike | None = None) -> CellResult:
    """One condition, run contiguously for ``duration_s``."""
    _check_cell(rate_hz, size_kib, duration_s, warmup_s)
    n = int(round(duration_s * rate_hz))
    session = trace_path = None
    if tracing:
        session, trace_path = _start_session(trace_dir, f"bench-{rate_hz}Hz-{size_kib}KiB", n)
    try:
        d = _drive(rate_hz, size_kib, n, duration_s, None, session)
    finally:
        if session is not None:
            recorder.session_stop(session)
    cutoff = int(d["sent"][0]) + int(warmup_s * 1e9) if d["got"] else 0
    samples = d["lat"][d["sent"] >= cutoff].tolist()
    return _cell(rate_hz, size_kib, tracing, samples, n, d, trace_path)


def paired_schedule(n: int, seed: int = 0) -> np.ndarray:
    """``n`` arm flags (True = traced); each aligned pair holds one of each."""
    rng = np.random.default_rng(seed)
    first = rng.random((n + 1) // 2) < 0.5
    arms = np.empty(2 * len(first), dtype=bool)
    arms[0::2], arms[1::2] = first, ~first
    return arms[:n]


def run_paired_cell(rate_hz: int, size_kib: int, duration_s: float, warmup_s: float, *,
                    trace_dir: str | os.PathLike | None = None,
                    seed: int = 0) -> tuple[CellResult, CellResult]:
    """Both conditions interleaved message by message in one run.

    Each consecutive pair of messages holds one traced and one untraced
    message in random order.  The run lasts ``2 * duration_s - warmup_s``
    so each arm gets as many post-warmup samples as a contiguous
    ``run_cell`` of ``duration_s``.  Unclean samples are dropped from
    both arms' statistics.
    """
    _check_cell(rate_hz, size_kib, duration_s, warmup_s)
    total_s = 2 * duration_s - warmup_s
    n = int(round(total_s * rate_hz))
    arms = paired_schedule(n, seed)
    session, trace_path = _start_session(trace_dir, f"bench-{rate_hz}Hz-{size_kib}KiB", n)
    try:
        d = _drive(rate_hz, size_kib, n, total_s, arms, session)
    finally:
        recorder.session_stop(session)
    cutoff = int(d["sent"][0]) + int(warmup_s * 1e9) if d["got"] else 0
    keep = (d["sent"] >= cutoff) & d["clean"]
    off = d["lat"][keep & ~d["arm"]].tolist()
    on = d["lat"][keep & d["arm"]].tolist()
    return (_cell(rate_hz, size_kib, False, off, n, d, None),
            _cell(rate_hz, size_kib, True, on, n, d, trace_path))


def overhead(untraced: CellResult, traced: CellResult) -> CellOverhead:
    if untraced.key != traced.key:
        raise CellMismatch(f"cells differ: {untraced.key} vs {traced.key}")
    if untraced.tracing or not traced.tracing:
        raise CellMismatch("expected an (untraced, traced) pair")
    absolute = traced.mean - untraced.mean
    relative = absolute / untraced.mean if untraced.mean else float("inf")
    return CellOverhead(untraced.rate_hz, untraced.size_kib, absolute, relative)


def aggregate(pairs: list[tuple[CellResult, CellResult]]) -> OverheadResult:
    """Subtract each cell's untraced mean from both conditions, then pool.

    Pooling is by sample, so high-rate cells weigh more.
    """
    if not pairs:
        raise EmptyInput("no cell pairs to aggregate")
    cells, base, traced = [], [], []
    for u, t in pairs:
        cells.append(overhead(u, t))
        m = u.mean
        base.append(np.asarray(u.latencies_ns, dtype=np.float64) - m)
        traced.append(np.asarray(t.latencies_ns, dtype=np.float64) - m)
    b = np.concatenate(base)
    t = np.concatenate(traced)
    if b.size == 0 or t.size == 0:
        raise EmptyInput("cells carry no samples")
    return OverheadResult(
        cells=cells,
        untraced_mean_ns=float(b.mean()),
        traced_mean_ns=float(t.mean()),
        untraced_iqr_ns=(float(np.percentile(b, 25)), float(np.percentile(b, 75))),
        traced_iqr_ns=(float(np.percentile(t, 25)), float(np.percentile(t, 75))),
        samples=(int(b.size), int(t.size)),
    )


# -- per-emit cost -------------------------------------------------------------

_HOT = [
    (TP.api_publish, (1,)), (TP.core_publish, (2, 1)), (TP.transport_publish, (1,)),
    (TP.api_executor_execute, (3,)), (TP.transport_take, (3, 1, 123, True)),
    (TP.core_take, (1,)), (TP.api_take, (1,)), (TP.callback_start, (4, True)),
    (TP.callback_end, (4,)), (TP.api_executor_get_next_ready, ()),
]


def measure_emit_cost(backend: recorder.Backend | str = recorder.Backend.RING,
                      total: int = 1_000_000, batch: int = 1000,
                      patterns: list[str] | None = None,
                      output_path: str | os.PathLike | None = None) -> dict:
    """Median per-emit cost over ``total`` emits of a hot-path mix.

    Batches of ``batch`` calls are timed as units, alternating with a
    batch of the same loop calling a do-nothing Python function (what an
    instrumentation site costs with no session).  The result is the
    median of the paired differences, so host drift cancels out.  Raw
    and baseline medians are returned alongside.
    """
    backend = recorder.Backend(backend)
    nb = max(1, total // batch)
    mix = [_HOT[i % len(_HOT)] for i in range(batch)]
    tmp = None
    if output_path is None:
        tmp = tempfile.TemporaryDirectory(prefix="ptemit-")
        output_path = Path(tmp.name) / "emit.ptrc"
    # with every event stored, a large enough ring never drops
    cap = batch * nb + 1024 if backend is recorder.Backend.RING else recorder.MIN_CAPACITY

    def nothing(tp, p):
        pass

    clock = time.perf_counter_ns
    raw = np.empty(nb, dtype=np.float64)
    base = np.empty(nb, dtype=np.float64)
    gc_was = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        session = recorder.session_start(recorder.SessionConfig(
            "emit-cost", patterns if patterns is not None else ["pt:*"], cap,
            output_path, backend))
        try:
            fn = recorder.tracer.emit
            for b in range(nb):
                t0 = clock()
                for tp, p in mix:
                    nothing(tp, p)
                t1 = clock()
                for tp, p in mix:
                    fn(tp, p)
                t2 = clock()
                base[b] = (t1 - t0) / batch
                raw[b] = (t2 - t1) / batch
        finally:
            stats = recorder.session_stop(session)
    finally:
        if gc_was:
            gc.enable()
        if tmp is not None:
            tmp.cleanup()
    net = float(np.median(raw - base))
    return {"backend": backend.value, "emits": nb * batch, "median_ns": max(net, 0.0),
            "raw_median_ns": float(np.median(raw)), "loop_baseline_ns": float(np.median(base)),
            "stored": stats.stored, "dropped": stats.dropped_event_count}


# -- full sweep ----------------------------------------------------------------

def run_bench(config: BenchConfig, out_dir: str | os.PathLike | None = None,
              progress=None) -> dict:
    if config.realtime:
        try_realtime()
    pairs = []
    emit_cost = measure_emit_cost()
    for rate in config.rates_hz:
        for size in config.sizes_kib:
            if config.paired:
                cells = run_paired_cell(rate, size, config.duration_s, config.warmup_s,
                                        trace_dir=out_dir, seed=config.seed)
            else:
                cells = tuple(run_cell(rate, size, tracing, config.duration_s,
                                       config.warmup_s, trace_dir=out_dir)
                              for tracing in (False, True))
            if progress:
                for r in cells:
                    progress(r)
            pairs.append(tuple(cells))
    result = aggregate(pairs)
    doc = {
        "config": asdict(config),
        "emit_cost_ns": emit_cost["median_ns"],
        "estimate_ns": 10 * emit_cost["median_ns"],
        "cells": [
            {**c.row(), "valid": c.valid, "samples": len(c.latencies_ns),
             "published": c.published, "delivered": c.delivered}
            for pair in pairs for c in pair],
        "overhead": {
            "cells": [asdict(c) for c in result.cells],
            "untraced_mean_ns": result.untraced_mean_ns,
            "traced_mean_ns": result.traced_mean_ns,
            "untraced_iqr_ns": list(result.untraced_iqr_ns),
            "traced_iqr_ns": list(result.traced_iqr_ns),
            "samples": list(result.samples),
        },
    }
    if out_dir is not None:
        write_outputs(out_dir, doc, [c for pair in pairs for c in pair])
    return {"doc": doc, "pairs": pairs, "overhead": result, "emit_cost": emit_cost}


def write_outputs(out_dir, doc: dict, cells: list[CellResult]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(doc, indent=2) + "\n")
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for c in cells:
            w.writerow(c.row())
