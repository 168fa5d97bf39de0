"""Helpers for testing instrumented code through its trace.

    result = run_and_trace(workload, ["pt:*"])
    assert result.count(TracepointId.core_node_init) == 1
    assert assert_event_order(result, ["api_publish", "core_publish"])
"""

from __future__ import annotations

import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import recorder
from .analysis.model import SystemModel, build_model
from .recorder import DropStats
from .trace_io import read_trace
from .trace_model import TraceEvent, TracepointId, by_name

DEFAULT_TEST_CAPACITY = 2 ** 16


@dataclass
class TraceTestResult:
    events: list[TraceEvent]
    model: SystemModel
    drop_stats: DropStats
    value: Any = None
    path: str | None = None

    def of(self, tp: TracepointId | str) -> list[TraceEvent]:
        tp = _tp(tp)
        return [e for e in self.events if e.tracepoint == tp]

    def count(self, tp: TracepointId | str) -> int:
        return len(self.of(tp))

    def counts(self) -> Counter:
        return Counter(TracepointId(e.tracepoint) for e in self.events)


def _tp(x) -> TracepointId:
    return by_name(x) if isinstance(x, str) else TracepointId(x)


def run_and_trace(workload: Callable[[], Any], patterns: Sequence[str] = ("pt:*",), *,
                  capacity: int = DEFAULT_TEST_CAPACITY,
                  output_path: str | os.PathLike | None = None) -> TraceTestResult:
    """Run ``workload`` inside a fresh session and decode what it recorded.

    When the workload raises, the session is still stopped and its file
    written before the exception propagates.
    """
    tmp = None
    if output_path is None:
        tmp = tempfile.TemporaryDirectory(prefix="pttest-")
        output_path = Path(tmp.name) / "test.ptrc"
    try:
        session = recorder.session_start(
            recorder.SessionConfig("test", list(patterns), capacity, output_path))
        try:
            value = workload()
        finally:
            stats = recorder.session_stop(session)
        _, events = read_trace(output_path)
        return TraceTestResult(events, build_model(events), stats, value,
                               None if tmp else str(output_path))
    finally:
        if tmp is not None:
            tmp.cleanup()


def assert_event_order(result: TraceTestResult | Iterable[TraceEvent],
                       names: Sequence[TracepointId | str]) -> bool:
    """True iff ``names`` is a subsequence of some single thread's events."""
    wanted = [_tp(n) for n in names]
    if not wanted:
        return True
    events = result.events if isinstance(result, TraceTestResult) else list(result)
    per_thread: dict[int, list[TraceEvent]] = {}
    for e in events:
        per_thread.setdefault(e.thread_id, []).append(e)
    for evs in per_thread.values():
        evs.sort(key=lambda e: e.seq)
        i = 0
        for e in evs:
            if e.tracepoint == wanted[i]:
                i += 1
                if i == len(wanted):
                    return True
    return False
