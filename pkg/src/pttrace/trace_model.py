"""Tracepoint catalog, payload schemas and the in-memory event type.

The catalog is closed: 28 tracepoints across three layers.  ``api_*``
points live in the high-level client layer, ``core_*`` in the common
core and ``transport_*`` in the middleware abstraction.  Initialization
points describe objects once (names, topics, periods); runtime points
carry only fixed-width handles so the hot path stays cheap.

Payload values are plain Python objects (``int``, ``bool``, ``str``); the
schema's :class:`FieldType` at each position is the value's tag.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple

from .errors import MalformedPayload, SchemaMismatch

U64_MAX = 2**64 - 1
I64_MIN = -(2**63)
I64_MAX = 2**63 - 1
TEXT_MAX_BYTES = 0xFFFF


class FieldType(enum.Enum):
    HANDLE = "H"
    UINT64 = "U"
    INT64 = "I"
    BOOL = "B"
    TEXT = "T"


class Layer(enum.Enum):
    API = "api"
    CORE = "core"
    TRANSPORT = "transport"


class Kind(enum.Enum):
    INITIALIZATION = "I"
    RUNTIME = "R"


class HotPath(enum.Enum):
    PUBLISH = "P"
    RECEIVE = "S"
    NONE = ""


class TracepointId(enum.IntEnum):
    """Catalog identifiers; the integer value is the on-disk id."""

    # api layer
    api_subscription_init = 0
    api_subscription_callback_added = 1
    api_publish = 2
    api_take = 3
    api_service_callback_added = 4
    api_timer_callback_added = 5
    api_timer_link_node = 6
    api_callback_register = 7
    callback_start = 8
    callback_end = 9
    api_executor_get_next_ready = 10
    api_executor_wait_for_work = 11
    api_executor_execute = 12
    # core layer
    core_init = 13
    core_node_init = 14
    core_publisher_init = 15
    core_subscription_init = 16
    core_publish = 17
    core_take = 18
    core_client_init = 19
    core_service_init = 20
    core_timer_init = 21
    core_lifecycle_state_machine_init = 22
    core_lifecycle_transition = 23
    # transport layer
    transport_publisher_init = 24
    transport_subscription_init = 25
    transport_publish = 26
    transport_take = 27


@dataclass(frozen=True)
class TracepointDescriptor:
    id: TracepointId
    layer: Layer
    kind: Kind
    hot_path: HotPath
    payload_schema: tuple[tuple[str, FieldType], ...]

    @property
    def name(self) -> str:
        return self.id.name

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.payload_schema)


class TraceEvent(NamedTuple):
    tracepoint: TracepointId
    timestamp_ns: int
    thread_id: int
    seq: int
    payload: tuple


_H, _U, _I, _B, _T = (FieldType.HANDLE, FieldType.UINT64, FieldType.INT64,
                      FieldType.BOOL, FieldType.TEXT)
_API, _CORE, _TRANSPORT = Layer.API, Layer.CORE, Layer.TRANSPORT
_INIT, _RT = Kind.INITIALIZATION, Kind.RUNTIME
_P, _S, _N = HotPath.PUBLISH, HotPath.RECEIVE, HotPath.NONE

_T_ = TracepointId
_ROWS = [
    (_T_.api_subscription_init, _API, _INIT, _N, [("sub", _H), ("sub_object", _H)]),
    (_T_.api_subscription_callback_added, _API, _INIT, _N, [("sub_object", _H), ("callback", _H)]),
    (_T_.api_publish, _API, _RT, _P, [("message", _H)]),
    (_T_.api_take, _API, _RT, _S, [("message", _H)]),
    (_T_.api_service_callback_added, _API, _INIT, _N, [("service", _H), ("callback", _H)]),
    (_T_.api_timer_callback_added, _API, _INIT, _N, [("timer", _H), ("callback", _H)]),
    (_T_.api_timer_link_node, _API, _INIT, _N, [("timer", _H), ("node", _H)]),
    (_T_.api_callback_register, _API, _INIT, _N, [("callback", _H), ("symbol", _T)]),
    (_T_.callback_start, _API, _RT, _S, [("callback", _H), ("intra_process", _B)]),
    (_T_.callback_end, _API, _RT, _N, [("callback", _H)]),
    (_T_.api_executor_get_next_ready, _API, _RT, _S, []),
    (_T_.api_executor_wait_for_work, _API, _RT, _S, [("timeout_ns", _I)]),
    (_T_.api_executor_execute, _API, _RT, _S, [("handle", _H)]),
    (_T_.core_init, _CORE, _INIT, _N, [("context", _H), ("tool_version", _T)]),
    (_T_.core_node_init, _CORE, _INIT, _N,
     [("node", _H), ("transport_node", _H), ("name", _T), ("namespace", _T)]),
    (_T_.core_publisher_init, _CORE, _INIT, _N,
     [("pub", _H), ("node", _H), ("topic", _T), ("queue_depth", _U)]),
    (_T_.core_subscription_init, _CORE, _INIT, _N,
     [("sub", _H), ("node", _H), ("topic", _T), ("queue_depth", _U)]),
    (_T_.core_publish, _CORE, _RT, _P, [("pub", _H), ("message", _H)]),
    (_T_.core_take, _CORE, _RT, _S, [("message", _H)]),
    (_T_.core_client_init, _CORE, _INIT, _N,
     [("client", _H), ("node", _H), ("transport_client", _H), ("name", _T)]),
    (_T_.core_service_init, _CORE, _INIT, _N,
     [("service", _H), ("node", _H), ("transport_service", _H), ("name", _T)]),
    (_T_.core_timer_init, _CORE, _INIT, _N, [("timer", _H), ("period_ns", _I)]),
    (_T_.core_lifecycle_state_machine_init, _CORE, _INIT, _N, [("node", _H), ("sm", _H)]),
    # runtime, yet labelled: transitions are rare enough to afford text
    (_T_.core_lifecycle_transition, _CORE, _RT, _N,
     [("sm", _H), ("start_label", _T), ("goal_label", _T)]),
    (_T_.transport_publisher_init, _TRANSPORT, _INIT, _N, [("transport_pub", _H), ("gid", _U)]),
    (_T_.transport_subscription_init, _TRANSPORT, _INIT, _N, [("transport_sub", _H), ("gid", _U)]),
    (_T_.transport_publish, _TRANSPORT, _RT, _P, [("message", _H)]),
    (_T_.transport_take, _TRANSPORT, _RT, _S,
     [("transport_sub", _H), ("message", _H), ("source_timestamp_ns", _I), ("taken", _B)]),
]

CATALOG: tuple[TracepointDescriptor, ...] = tuple(
    TracepointDescriptor(tp, layer, kind, hot, tuple(schema))
    for tp, layer, kind, hot, schema in _ROWS
)
assert [d.id for d in CATALOG] == list(TracepointId)

# Runtime descriptors that may carry text despite being on the runtime side.
TEXT_EXEMPT_RUNTIME = frozenset({TracepointId.core_lifecycle_transition})


def catalog() -> list[TracepointDescriptor]:
    """All descriptors: api block, core block, transport block."""
    return list(CATALOG)


def descriptor_of(tp: TracepointId | int) -> TracepointDescriptor:
    return CATALOG[tp]


def by_name(name: str) -> TracepointId:
    try:
        return TracepointId[name]
    except KeyError:
        raise KeyError(f"unknown tracepoint {name!r}") from None


# -- validation ---------------------------------------------------------------

def _check_value(ftype: FieldType, value) -> bool:
    if ftype is _H or ftype is _U:
        return type(value) is int and 0 <= value <= U64_MAX
    if ftype is _I:
        return type(value) is int and I64_MIN <= value <= I64_MAX
    if ftype is _B:
        return type(value) is bool
    return type(value) is str and len(value.encode("utf-8")) <= TEXT_MAX_BYTES


def _make_validator(desc: TracepointDescriptor):
    """Build a predicate for one schema.

    Fixed-width schemas get an unrolled expression compiled once, since
    the predicate runs on every enabled emit.
    """
    schema = desc.payload_schema
    arity = len(schema)
    types = tuple(ft for _, ft in schema)
    if _T in types:
        def check(payload):
            return (type(payload) is tuple and len(payload) == arity
                    and all(_check_value(ft, v) for ft, v in zip(types, payload)))
        return check
    if arity == 0:
        return lambda p: p == ()

    terms = ["type(p) is tuple", f"len(p) == {arity}"]
    for i, ft in enumerate(types):
        if ft is _B:
            terms.append(f"type(p[{i}]) is bool")
        elif ft is _I:
            terms.append(f"type(p[{i}]) is int and {I64_MIN} <= p[{i}] <= {I64_MAX}")
        else:
            terms.append(f"type(p[{i}]) is int and 0 <= p[{i}] <= {U64_MAX}")
    return eval(f"lambda p: {' and '.join(terms)}", {})


VALIDATORS = tuple(_make_validator(d) for d in CATALOG)


def conforms(tp: TracepointId | int, payload) -> bool:
    return VALIDATORS[tp](payload)


def check_payload(desc: TracepointDescriptor, payload) -> tuple:
    payload = tuple(payload)
    if not VALIDATORS[desc.id](payload):
        raise SchemaMismatch(
            f"{desc.name}: payload {payload!r} does not match schema "
            f"{[(n, f.value) for n, f in desc.payload_schema]}"
        )
    return payload


# -- codec --------------------------------------------------------------------

_FIXED_FMT = {_H: "Q", _U: "Q", _I: "q", _B: "?"}


class _Codec:
    __slots__ = ("fixed", "struct", "types")

    def __init__(self, desc: TracepointDescriptor):
        self.types = tuple(ft for _, ft in desc.payload_schema)
        self.fixed = _T not in self.types
        self.struct = (struct.Struct("<" + "".join(_FIXED_FMT[t] for t in self.types))
                       if self.fixed else None)


_CODECS = tuple(_Codec(d) for d in CATALOG)
_U16 = struct.Struct("<H")


def payload_size(desc: TracepointDescriptor) -> int | None:
    """Encoded size for fixed-width schemas, ``None`` when text is present."""
    codec = _CODECS[desc.id]
    return codec.struct.size if codec.fixed else None


def encode_payload(desc: TracepointDescriptor, payload) -> bytes:
    payload = check_payload(desc, payload)
    return _encode_unchecked(desc.id, payload)


def _encode_unchecked(tp: int, payload: tuple) -> bytes:
    codec = _CODECS[tp]
    if codec.fixed:
        return codec.struct.pack(*payload)
    parts = []
    for ft, value in zip(codec.types, payload):
        if ft is _T:
            raw = value.encode("utf-8")
            parts.append(_U16.pack(len(raw)))
            parts.append(raw)
        else:
            parts.append(struct.pack("<" + _FIXED_FMT[ft], value))
    return b"".join(parts)


def decode_payload(desc: TracepointDescriptor, data: bytes) -> tuple:
    return _decode(desc.id, memoryview(data), 0, len(data))


def _decode(tp: int, buf, start: int, end: int) -> tuple:
    codec = _CODECS[tp]
    if codec.fixed:
        if end - start != codec.struct.size:
            raise MalformedPayload(
                f"{TracepointId(tp).name}: expected {codec.struct.size} bytes, got {end - start}")
        return codec.struct.unpack_from(buf, start)
    out = []
    pos = start
    try:
        for ft in codec.types:
            if ft is _T:
                (n,) = _U16.unpack_from(buf, pos)
                pos += 2
                if pos + n > end:
                    raise MalformedPayload(f"{TracepointId(tp).name}: text runs past payload end")
                out.append(bytes(buf[pos:pos + n]).decode("utf-8"))
                pos += n
            else:
                fmt = "<" + _FIXED_FMT[ft]
                width = struct.calcsize(fmt)
                if pos + width > end:
                    raise MalformedPayload(f"{TracepointId(tp).name}: truncated payload")
                out.append(struct.unpack_from(fmt, buf, pos)[0])
                pos += width
    except (struct.error, UnicodeDecodeError) as exc:
        raise MalformedPayload(f"{TracepointId(tp).name}: {exc}") from exc
    if pos != end:
        raise MalformedPayload(f"{TracepointId(tp).name}: {end - pos} trailing bytes")
    return tuple(out)
