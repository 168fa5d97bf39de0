"""Launch documents: configure tracing, spawn node processes, collect.

A document is JSON::

    {"trace": {"session_name": "demo", "events": ["pt:*"], "output_dir": "out"},
     "nodes": [{"fixture": "talker", "args": ["--count", "10"]},
               {"fixture": "listener"}]}

Each node runs as ``python -m pttrace.fixtures NAME ARGS...``.  Tracing
reaches it through the environment, so fixtures start their session
before creating any node and stop it when they exit, one file per
process.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidPattern, ParseError, SchemaError, SpawnFailure, TraceFormatError
from ..fixtures import FIXTURES
from ..recorder import compile_pattern
from ..trace_io import read_packets
from .env import TraceSettings

_TOP_KEYS = {"trace", "nodes"}
_TRACE_KEYS = {"session_name", "events", "output_dir"}
_NODE_KEYS = {"fixture", "args"}


@dataclass
class NodeEntry:
    fixture: str
    args: list[str] = field(default_factory=list)


@dataclass
class LaunchDocument:
    nodes: list[NodeEntry]
    trace: TraceSettings | None = None


@dataclass
class ProcessResult:
    fixture: str
    pid: int
    exit_code: int
    trace_file: str | None = None
    dropped: int = 0

    @property
    def status(self) -> str:
        return "ok" if self.exit_code == 0 else "NonZeroExit"


@dataclass
class LaunchReport:
    processes: list[ProcessResult]
    tracing: bool

    @property
    def trace_files(self) -> list[str]:
        return [p.trace_file for p in self.processes if p.trace_file]

    @property
    def ok(self) -> bool:
        return all(p.exit_code == 0 for p in self.processes)

    @property
    def dropped_event_count(self) -> int:
        return sum(p.dropped for p in self.processes)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def _strings(value, what: str) -> list[str]:
    _require(isinstance(value, list) and all(isinstance(v, str) for v in value),
             f"{what} must be a list of strings")
    return list(value)


def parse_launch(text: str) -> LaunchDocument:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"launch document is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "launch document must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    _require(not unknown, f"unknown keys {sorted(unknown)}")
    _require("nodes" in raw, "launch document needs a 'nodes' list")
    nodes_raw = raw["nodes"]
    _require(isinstance(nodes_raw, list) and nodes_raw, "'nodes' must be a non-empty list")

    nodes = []
    for i, n in enumerate(nodes_raw):
        _require(isinstance(n, dict), f"nodes[{i}] must be an object")
        unknown = set(n) - _NODE_KEYS
        _require(not unknown, f"nodes[{i}]: unknown keys {sorted(unknown)}")
        _require(isinstance(n.get("fixture"), str) and n["fixture"],
                 f"nodes[{i}]: 'fixture' must be a non-empty string")
        nodes.append(NodeEntry(n["fixture"], _strings(n.get("args", []), f"nodes[{i}].args")))

    trace = None
    if "trace" in raw:
        t = raw["trace"]
        _require(isinstance(t, dict), "'trace' must be an object")
        unknown = set(t) - _TRACE_KEYS
        _require(not unknown, f"trace: unknown keys {sorted(unknown)}")
        _require(isinstance(t.get("session_name"), str) and t["session_name"],
                 "trace.session_name must be a non-empty string")
        events = _strings(t.get("events", ["pt:*"]), "trace.events")
        _require(bool(events), "trace.events must not be empty")
        for e in events:
            try:
                compile_pattern(e)
            except InvalidPattern as exc:
                raise SchemaError(str(exc)) from exc
        out = t.get("output_dir", ".")
        _require(isinstance(out, str), "trace.output_dir must be a string")
        trace = TraceSettings(t["session_name"], events, out)
    return LaunchDocument(nodes, trace)


def launch(doc: LaunchDocument, *, timeout: float | None = None,
           python: str = sys.executable) -> LaunchReport:
    """Run every node process to completion and collect their traces.

    SIGINT/SIGTERM received meanwhile are forwarded to the children,
    which stop their sessions on the way out; the launcher still waits
    for them and reports normally.
    """
    for n in doc.nodes:
        if n.fixture not in FIXTURES:
            raise SpawnFailure(f"unknown fixture {n.fixture!r}; known: {sorted(FIXTURES)}")

    env = dict(os.environ)
    for key in ("PT_TRACE_SESSION", "PT_TRACE_EVENTS", "PT_TRACE_OUTPUT_DIR"):
        env.pop(key, None)
    if doc.trace is not None:
        Path(doc.trace.output_dir).mkdir(parents=True, exist_ok=True)
        env.update(doc.trace.to_env())
    # children import this very package even when it is not installed
    src = str(Path(__file__).resolve().parents[2])
    env["PYTHONPATH"] = os.pathsep.join(p for p in (src, env.get("PYTHONPATH")) if p)

    procs: list[tuple[NodeEntry, subprocess.Popen]] = []

    def forward(signum, frame):
        for _, p in procs:
            if p.poll() is None:
                p.send_signal(signum)

    handlers = {}
    in_main = _in_main_thread()
    if in_main:
        for sig in (signal.SIGINT, signal.SIGTERM):
            handlers[sig] = signal.signal(sig, forward)
    try:
        for n in doc.nodes:
            try:
                p = subprocess.Popen([python, "-m", "pttrace.fixtures", n.fixture, *n.args],
                                     env=env)
            except OSError as exc:
                forward(signal.SIGTERM, None)
                for _, q in procs:
                    q.wait()
                raise SpawnFailure(f"could not start fixture {n.fixture!r}: {exc}") from exc
            procs.append((n, p))
        results = []
        for n, p in procs:
            try:
                code = p.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                p.terminate()
                code = p.wait()
            results.append(_result(doc, n, p, code))
    finally:
        for sig, h in handlers.items():
            signal.signal(sig, h)
    return LaunchReport(results, doc.trace is not None)


def _in_main_thread() -> bool:
    return threading.current_thread() is threading.main_thread()


def _result(doc: LaunchDocument, n: NodeEntry, p: subprocess.Popen, code: int) -> ProcessResult:
    res = ProcessResult(n.fixture, p.pid, code)
    if doc.trace is not None:
        path = doc.trace.trace_path(p.pid)
        if path.exists():
            res.trace_file = str(path)
            try:
                _, packets = read_packets(path)
                res.dropped = sum(pk.dropped_count for pk in packets)
            except TraceFormatError:
                pass
    return res


def load_launch(path: str | os.PathLike) -> LaunchDocument:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read launch document {path}: {exc}") from exc
    return parse_launch(text)
