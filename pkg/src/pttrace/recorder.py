"""The tracer: per-thread bounded buffers behind a swappable backend.

Instrumented code never talks to a session directly.  It calls
``tracer.emit(tracepoint, payload)`` where :data:`tracer` is a tiny slot
object whose ``emit`` attribute is rebound when a session starts or
stops.  With no session, or with the null backend, ``emit`` is a plain
no-op function, so an instrumentation site costs one attribute load and
one call.

With the ring backend every thread appends into its own preallocated
buffer; the buffer never blocks and never takes a lock shared with other
threads.  Once full, the newest events are discarded and counted.
Buffers are drained only by :func:`session_stop`.

The ring lives in the ``_ringbuf`` C extension when it was built; a
pure-Python twin with the same behavior is used otherwise, or when
``PT_PURE_PYTHON_RING=1`` is set.
"""

from __future__ import annotations

import enum
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import trace_io
from .errors import (AlreadyRecording, AlreadyStopped, FlushFailure,
                     InvalidConfig, InvalidPattern, SchemaMismatch)
from .trace_model import CATALOG, VALIDATORS, TracepointId, check_payload

try:
    from . import _ringbuf
except ImportError:  # extension not built; the pure-Python ring takes over
    _ringbuf = None

PROVIDER = "pt"
DEFAULT_CAPACITY = 65536
MIN_CAPACITY = 64

_PATTERN_RE = re.compile(r"^([a-z][a-z0-9_]*):([a-z0-9_]*)(\*?)$")

_monotonic_ns = time.monotonic_ns


class Backend(enum.Enum):
    NULL = "null"
    RING = "ring"


class SessionState(enum.Enum):
    CREATED = "created"
    RECORDING = "recording"
    STOPPED = "stopped"


@dataclass
class SessionConfig:
    session_name: str
    enabled_patterns: list[str] = field(default_factory=lambda: [f"{PROVIDER}:*"])
    buffer_capacity_events: int = DEFAULT_CAPACITY
    output_path: str | os.PathLike = "trace.ptrc"
    backend: Backend = Backend.RING

    def __post_init__(self):
        if not self.session_name:
            raise InvalidConfig("session_name must be non-empty")
        if self.buffer_capacity_events < MIN_CAPACITY:
            raise InvalidConfig(
                f"buffer_capacity_events must be >= {MIN_CAPACITY}, got {self.buffer_capacity_events}")
        self.enabled_patterns = list(self.enabled_patterns)
        for p in self.enabled_patterns:
            compile_pattern(p)
        if isinstance(self.backend, str):
            self.backend = Backend(self.backend)


@dataclass
class DropStats:
    dropped: dict[int, int] = field(default_factory=dict)
    emitted: dict[int, int] = field(default_factory=dict)

    @property
    def dropped_event_count(self) -> int:
        return sum(self.dropped.values())

    @property
    def total_emitted(self) -> int:
        return sum(self.emitted.values())

    @property
    def stored(self) -> int:
        return self.total_emitted - self.dropped_event_count


def compile_pattern(pattern: str) -> list[TracepointId]:
    """Resolve ``provider:name`` (optional trailing ``*``) to tracepoints."""
    m = _PATTERN_RE.match(pattern) if isinstance(pattern, str) else None
    if m is None:
        raise InvalidPattern(f"invalid event pattern {pattern!r} (expected '{PROVIDER}:name[*]')")
    provider, stem, star = m.groups()
    if not stem and not star:
        raise InvalidPattern(f"invalid event pattern {pattern!r}: empty name")
    if provider != PROVIDER:
        return []
    if star:
        return [tp for tp in TracepointId if tp.name.startswith(stem)]
    return [tp for tp in TracepointId if tp.name == stem]


def _discard(tp, payload):
    pass


class _Dispatch:
    """Indirection between instrumentation sites and the active backend."""

    __slots__ = ("emit",)

    def __init__(self):
        self.emit = _discard


tracer = _Dispatch()


class _ThreadBuffer:
    __slots__ = ("thread_id", "events", "count", "dropped")

    def __init__(self, thread_id: int, capacity: int):
        self.thread_id = thread_id
        self.events = [None] * capacity
        self.count = 0
        self.dropped = 0


class _PyRing:
    """Pure-Python ring backend, used when the native one is unavailable."""

    def __init__(self, capacity: int, enabled: list[bool]):
        self.capacity = capacity
        self.enabled = enabled
        self.local = threading.local()
        self.buffers: list[_ThreadBuffer] = []
        self.closed = False
        self.emit = self._make_emit()

    def _register(self) -> _ThreadBuffer:
        buf = _ThreadBuffer(threading.get_native_id() & 0xFFFFFFFF, self.capacity)
        self.local.buf = buf
        # list.append is atomic; registration happens once per thread
        self.buffers.append(buf)
        return buf

    def _make_emit(self):
        # closure cells instead of attribute loads: this runs on every event
        enabled = self.enabled
        capacity = self.capacity
        local = self.local
        register = self._register
        validators = VALIDATORS
        clock = _monotonic_ns

        def emit(tp, payload):
            if not enabled[tp]:
                return
            if not validators[tp](payload):
                _reject(tp, payload)
            ts = clock()
            try:
                buf = local.buf
            except AttributeError:
                buf = register()
            n = buf.count
            if n < capacity:
                buf.events[n] = (tp, ts, n, payload)
                buf.count = n + 1
            else:
                buf.dropped += 1

        return emit

    def drain(self) -> list[tuple[int, list, int]]:
        # a thread that fetched emit just before the swap may still store
        # past ``count``; those late events are simply not collected
        out = []
        for buf in list(self.buffers):
            n = buf.count
            out.append((buf.thread_id, buf.events[:n], buf.dropped))
        return out


def _reject(tp, payload):
    check_payload(CATALOG[tp], payload)
    raise SchemaMismatch(f"{CATALOG[tp].name}: bad payload {payload!r}")


_SCHEMA_CODES = tuple(
    "".join(ft.value for _, ft in d.payload_schema).encode("ascii") for d in CATALOG)


def native_available() -> bool:
    return _ringbuf is not None


def _use_native() -> bool:
    flag = os.environ.get("PT_PURE_PYTHON_RING", "").strip().lower()
    return native_available() and flag in ("", "0", "false", "no", "off")


def _make_ring(capacity: int, enabled: list[bool]):
    if _use_native():
        ring = _ringbuf.Ring(capacity, enabled, _SCHEMA_CODES, _reject)
        return ring
    return _PyRing(capacity, enabled)


class Session:
    """One recording session.  At most one is recording per process."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.state = SessionState.CREATED
        self.drop_stats = DropStats()
        self.clock_base_ns = 0
        self._enabled = [False] * len(CATALOG)
        self._ring = None
        self.emit = _discard

    @property
    def enabled_tracepoints(self) -> list[TracepointId]:
        return [tp for tp in TracepointId if self._enabled[tp]]

    def set_enabled(self, pattern: str, on: bool) -> int:
        matched = compile_pattern(pattern)
        # single list-item stores; emit reads them without locking
        for tp in matched:
            self._enabled[tp] = bool(on)
        return len(matched)

    def __repr__(self):
        return f"<Session {self.config.session_name!r} {self.state.value}>"


_lock = threading.Lock()
_active: Session | None = None


def active_session() -> Session | None:
    return _active


def session_start(config: SessionConfig) -> Session:
    global _active
    patterns = [compile_pattern(p) for p in config.enabled_patterns]
    with _lock:
        if _active is not None:
            raise AlreadyRecording(f"session {_active.config.session_name!r} is already recording")
        session = Session(config)
        for matched in patterns:
            for tp in matched:
                session._enabled[tp] = True
        session.clock_base_ns = _monotonic_ns()
        if config.backend is Backend.RING:
            session._ring = _make_ring(config.buffer_capacity_events, session._enabled)
            session.emit = session._ring.emit
        session.state = SessionState.RECORDING
        _active = session
        tracer.emit = session.emit
    return session


def emit(session: Session, tp: TracepointId, payload) -> None:
    session.emit(tp, payload)


def set_enabled(session: Session, pattern: str, on: bool) -> int:
    return session.set_enabled(pattern, on)


def session_stop(session: Session) -> DropStats:
    """Drain every thread buffer into the session's output file."""
    global _active
    with _lock:
        if session.state is SessionState.STOPPED:
            raise AlreadyStopped(f"session {session.config.session_name!r} already stopped")
        if session.state is not SessionState.RECORDING:
            raise AlreadyStopped(f"session {session.config.session_name!r} was never started")
        session.emit = _discard
        if _active is session:
            tracer.emit = _discard
            _active = None
        session.state = SessionState.STOPPED

    stats = DropStats()
    packets = []
    if session._ring is not None:
        for tid, events, dropped in session._ring.drain():
            stats.dropped[tid] = stats.dropped.get(tid, 0) + dropped
            stats.emitted[tid] = stats.emitted.get(tid, 0) + len(events) + dropped
            packets.append(trace_io.Packet(tid, events, dropped))
        session._ring = None
    session.drop_stats = stats

    header = trace_io.TraceFileHeader(
        session_name=session.config.session_name,
        process_id=os.getpid(),
        clock_base_ns=session.clock_base_ns,
    )
    path = Path(session.config.output_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        trace_io.write_trace(path, header, packets)
    except OSError as exc:
        raise FlushFailure(f"could not write trace {path}: {exc}") from exc
    return stats
