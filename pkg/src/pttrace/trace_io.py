"""Binary trace files, multi-file merging and JSON export.

File layout (all integers little-endian)::

    header   "PTRC" | u16 version | u16 len + utf-8 session name
             | u32 process id | u64 clock base (ns)
    packet*  u32 thread id | u32 event count | u32 dropped count
             | event*  u16 tracepoint | u16 payload len | u64 timestamp
                       | u32 seq | payload
    trailer  "CEND"

A file without the trailer was not closed properly and is rejected.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (BadMagic, MalformedPayload, SchemaMismatch, TruncatedFile,
                     UnknownTracepointId, UnsupportedVersion)
from .trace_model import (CATALOG, VALIDATORS, TracepointId, TraceEvent,
                          _decode, _encode_unchecked)

MAGIC = b"PTRC"
END_MARKER = b"CEND"
VERSION = 1

_HEAD = struct.Struct("<4sH")
_U16 = struct.Struct("<H")
_PROC = struct.Struct("<IQ")
_PACKET = struct.Struct("<III")
_EVENT = struct.Struct("<HHQI")
_END_AS_TID = struct.unpack("<I", END_MARKER)[0]
_N_TRACEPOINTS = len(CATALOG)


@dataclass
class TraceFileHeader:
    session_name: str
    process_id: int
    clock_base_ns: int
    version: int = VERSION


@dataclass
class Packet:
    """Events of one thread.  Each event is ``(tracepoint, timestamp_ns, seq, payload)``."""

    thread_id: int
    events: list = field(default_factory=list)
    dropped_count: int = 0

    @property
    def event_count(self) -> int:
        return len(self.events)


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("text longer than 65535 bytes")
    return _U16.pack(len(raw)) + raw


def write_trace(path: str | os.PathLike, header: TraceFileHeader,
                packets: Iterable[Packet]) -> None:
    """Write a complete trace file; the end marker goes last."""
    pack_event = _EVENT.pack
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, header.version))
        fh.write(_text(header.session_name))
        fh.write(_PROC.pack(header.process_id, header.clock_base_ns))
        for packet in packets:
            if packet.thread_id == _END_AS_TID:
                raise ValueError(f"thread id {packet.thread_id} collides with the end marker")
            chunks = [_PACKET.pack(packet.thread_id, len(packet.events), packet.dropped_count)]
            for tp, ts, seq, payload in packet.events:
                if not VALIDATORS[tp](payload):
                    raise SchemaMismatch(f"{CATALOG[tp].name}: bad payload {payload!r}")
                body = _encode_unchecked(tp, payload)
                chunks.append(pack_event(tp, len(body), ts, seq))
                chunks.append(body)
            fh.write(b"".join(chunks))
        fh.write(END_MARKER)


def _need(buf, pos: int, n: int, what: str) -> None:
    if pos + n > len(buf):
        raise TruncatedFile(f"file ends inside {what} at offset {pos}")


def read_packets(path: str | os.PathLike) -> tuple[TraceFileHeader, list[Packet]]:
    data = Path(path).read_bytes()
    buf = memoryview(data)
    if len(buf) < _HEAD.size:
        raise TruncatedFile(f"{path}: too short for a header")
    magic, version = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: unsupported version {version}")
    pos = _HEAD.size
    _need(buf, pos, 2, "header")
    (n,) = _U16.unpack_from(buf, pos)
    pos += 2
    _need(buf, pos, n + _PROC.size, "header")
    name = bytes(buf[pos:pos + n]).decode("utf-8")
    pos += n
    pid, clock_base = _PROC.unpack_from(buf, pos)
    pos += _PROC.size
    header = TraceFileHeader(name, pid, clock_base, version)

    unpack_event = _EVENT.unpack_from
    ev_size = _EVENT.size
    packets = []
    while True:
        _need(buf, pos, 4, "packet header")
        if buf[pos:pos + 4] == END_MARKER:
            pos += 4
            break
        _need(buf, pos, _PACKET.size, "packet header")
        tid, count, dropped = _PACKET.unpack_from(buf, pos)
        pos += _PACKET.size
        events = []
        for _ in range(count):
            _need(buf, pos, ev_size, "event header")
            tp, plen, ts, seq = unpack_event(buf, pos)
            pos += ev_size
            if tp >= _N_TRACEPOINTS:
                raise UnknownTracepointId(f"{path}: unknown tracepoint id {tp} at offset {pos - ev_size}")
            _need(buf, pos, plen, "event payload")
            try:
                payload = _decode(tp, buf, pos, pos + plen)
            except MalformedPayload as exc:
                raise MalformedPayload(f"{path}: {exc}") from None
            pos += plen
            events.append((TracepointId(tp), ts, seq, payload))
        packets.append(Packet(tid, events, dropped))
    if pos != len(buf):
        raise TruncatedFile(f"{path}: {len(buf) - pos} bytes after end marker")
    return header, packets


def read_trace(path: str | os.PathLike) -> tuple[TraceFileHeader, list[TraceEvent]]:
    """Decode a trace file into events, packet by packet in seq order."""
    header, packets = read_packets(path)
    events = []
    for packet in packets:
        tid = packet.thread_id
        events.extend(TraceEvent(tp, ts, tid, seq, payload)
                      for tp, ts, seq, payload in packet.events)
    return header, events


def merge_events(streams: Sequence[Sequence[TraceEvent]]) -> list[TraceEvent]:
    """Time-order events from several streams.

    Ties break on (stream index, thread id, seq), so the result does not
    depend on anything but the inputs.
    """
    keyed = [
        ((ev.timestamp_ns, i, ev.thread_id, ev.seq), ev)
        for i, stream in enumerate(streams)
        for ev in stream
    ]
    keyed.sort(key=lambda kv: kv[0])
    return [ev for _, ev in keyed]


def merge_files(paths: Iterable[str | os.PathLike]) -> tuple[list[TraceFileHeader], list[TraceEvent]]:
    headers, streams = [], []
    for p in paths:
        h, evs = read_trace(p)
        headers.append(h)
        streams.append(evs)
    return headers, merge_events(streams)


def event_to_dict(ev: TraceEvent) -> dict:
    desc = CATALOG[ev.tracepoint]
    return {
        "tracepoint": desc.name,
        "timestamp_ns": ev.timestamp_ns,
        "thread_id": ev.thread_id,
        "seq": ev.seq,
        "payload": dict(zip(desc.field_names, ev.payload)),
    }


def export_json(events: Iterable[TraceEvent]) -> str:
    """Newline-delimited JSON, one object per event."""
    lines = [json.dumps(event_to_dict(ev), separators=(",", ":")) for ev in events]
    return "".join(line + "\n" for line in lines)
