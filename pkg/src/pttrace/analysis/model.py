"""Rebuild the object graph from initialization events.

Runtime events only carry handles.  The init events emitted when
objects are created carry the names, topics and periods, chained
together by shared handles:

    subscription  transport_subscription_init -> core_subscription_init
                  -> api_subscription_init -> api_subscription_callback_added
                  -> api_callback_register
    publisher     transport_publisher_init -> core_publisher_init
    timer         core_timer_init -> api_timer_callback_added
                  -> api_callback_register -> api_timer_link_node

Missing links never abort the build; they end up in ``diagnostics``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..errors import InconsistentTrace
from ..trace_model import TracepointId as TP
from ..trace_model import TraceEvent


@dataclass
class NodeInfo:
    handle: int
    transport_handle: int
    name: str
    namespace: str


@dataclass
class PublisherInfo:
    handle: int
    node: int | None = None
    topic: str | None = None
    queue_depth: int | None = None
    gid: int | None = None


@dataclass
class SubscriptionInfo:
    handle: int
    node: int | None = None
    topic: str | None = None
    queue_depth: int | None = None
    gid: int | None = None
    sub_object: int | None = None
    callback: int | None = None
    symbol: str = ""


@dataclass
class TimerInfo:
    handle: int
    period_ns: int | None = None
    node: int | None = None
    callback: int | None = None
    symbol: str = ""


@dataclass
class ServiceInfo:
    handle: int
    node: int | None = None
    transport_handle: int | None = None
    name: str | None = None
    callback: int | None = None
    symbol: str = ""


@dataclass
class ClientInfo:
    handle: int
    node: int
    transport_handle: int
    name: str


@dataclass
class LifecycleInfo:
    handle: int
    node: int
    transitions: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def state(self) -> str:
        return self.transitions[-1][2] if self.transitions else "unconfigured"


@dataclass
class SystemModel:
    contexts: dict[int, str] = field(default_factory=dict)
    nodes: dict[int, NodeInfo] = field(default_factory=dict)
    publishers: dict[int, PublisherInfo] = field(default_factory=dict)
    subscriptions: dict[int, SubscriptionInfo] = field(default_factory=dict)
    timers: dict[int, TimerInfo] = field(default_factory=dict)
    services: dict[int, ServiceInfo] = field(default_factory=dict)
    clients: dict[int, ClientInfo] = field(default_factory=dict)
    lifecycles: dict[int, LifecycleInfo] = field(default_factory=dict)
    # callback handle -> (owner kind, owner handle)
    callback_owners: dict[int, tuple[str, int]] = field(default_factory=dict)
    symbols: dict[int, str] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def subscriptions_on(self, topic: str) -> list[SubscriptionInfo]:
        return [s for s in self.subscriptions.values() if s.topic == topic]

    def timer_by_symbol(self, symbol: str) -> TimerInfo | None:
        for t in self.timers.values():
            if t.symbol == symbol:
                return t
        return None

    def node_name(self, handle: int | None) -> str:
        node = self.nodes.get(handle) if handle is not None else None
        return node.name if node else "?"

    def counts(self) -> dict[str, int]:
        return {
            "nodes": len(self.nodes),
            "publishers": len(self.publishers),
            "subscriptions": len(self.subscriptions),
            "timers": len(self.timers),
            "services": len(self.services),
            "clients": len(self.clients),
            "lifecycle_machines": len(self.lifecycles),
        }


def _set(obj, attr: str, value, what: str) -> None:
    current = getattr(obj, attr)
    if current is not None and current != value:
        raise InconsistentTrace(
            f"{what} {obj.handle}: {attr} initialized as {current!r} and again as {value!r}")
    setattr(obj, attr, value)


def _put(table: dict, key: int, value, what: str) -> None:
    old = table.get(key)
    if old is not None and old != value:
        raise InconsistentTrace(f"{what} {key} initialized twice with conflicting payloads")
    table[key] = value


def build_model(events: Iterable[TraceEvent]) -> SystemModel:
    m = SystemModel()
    sub_objects: dict[int, int] = {}   # api-layer subscription object -> subscription
    pending_added: list[tuple[int, int]] = []  # callback_added seen before api_subscription_init

    def sub(handle: int) -> SubscriptionInfo:
        s = m.subscriptions.get(handle)
        if s is None:
            s = m.subscriptions[handle] = SubscriptionInfo(handle)
        return s

    def pub(handle: int) -> PublisherInfo:
        p = m.publishers.get(handle)
        if p is None:
            p = m.publishers[handle] = PublisherInfo(handle)
        return p

    def timer(handle: int) -> TimerInfo:
        t = m.timers.get(handle)
        if t is None:
            t = m.timers[handle] = TimerInfo(handle)
        return t

    def service(handle: int) -> ServiceInfo:
        s = m.services.get(handle)
        if s is None:
            s = m.services[handle] = ServiceInfo(handle)
        return s

    def own(cb: int, kind: str, owner: int) -> None:
        _put(m.callback_owners, cb, (kind, owner), "callback")

    for ev in events:
        tp, p = ev.tracepoint, ev.payload
        if tp == TP.core_init:
            _put(m.contexts, p[0], p[1], "context")
        elif tp == TP.core_node_init:
            _put(m.nodes, p[0], NodeInfo(p[0], p[1], p[2], p[3]), "node")
        elif tp == TP.transport_publisher_init:
            _set(pub(p[0]), "gid", p[1], "publisher")
        elif tp == TP.core_publisher_init:
            x = pub(p[0])
            _set(x, "node", p[1], "publisher")
            _set(x, "topic", p[2], "publisher")
            _set(x, "queue_depth", p[3], "publisher")
        elif tp == TP.transport_subscription_init:
            _set(sub(p[0]), "gid", p[1], "subscription")
        elif tp == TP.core_subscription_init:
            x = sub(p[0])
            _set(x, "node", p[1], "subscription")
            _set(x, "topic", p[2], "subscription")
            _set(x, "queue_depth", p[3], "subscription")
        elif tp == TP.api_subscription_init:
            x = sub(p[0])
            _set(x, "sub_object", p[1], "subscription")
            _put(sub_objects, p[1], p[0], "subscription object")
        elif tp == TP.api_subscription_callback_added:
            pending_added.append((p[0], p[1]))
        elif tp == TP.api_callback_register:
            _put(m.symbols, p[0], p[1], "callback symbol")
        elif tp == TP.core_timer_init:
            _set(timer(p[0]), "period_ns", p[1], "timer")
        elif tp == TP.api_timer_callback_added:
            _set(timer(p[0]), "callback", p[1], "timer")
            own(p[1], "timer", p[0])
        elif tp == TP.api_timer_link_node:
            _set(timer(p[0]), "node", p[1], "timer")
        elif tp == TP.core_service_init:
            x = service(p[0])
            _set(x, "node", p[1], "service")
            _set(x, "transport_handle", p[2], "service")
            _set(x, "name", p[3], "service")
        elif tp == TP.api_service_callback_added:
            _set(service(p[0]), "callback", p[1], "service")
            own(p[1], "service", p[0])
        elif tp == TP.core_client_init:
            _put(m.clients, p[0], ClientInfo(p[0], p[1], p[2], p[3]), "client")
        elif tp == TP.core_lifecycle_state_machine_init:
            _put(m.lifecycles, p[1], LifecycleInfo(p[1], p[0]), "lifecycle state machine")
        elif tp == TP.core_lifecycle_transition:
            lc = m.lifecycles.get(p[0])
            if lc is None:
                m.diagnostics.append(f"lifecycle transition for unknown state machine {p[0]}")
            else:
                lc.transitions.append((ev.timestamp_ns, p[1], p[2]))

    for sub_object, cb in pending_added:
        handle = sub_objects.get(sub_object)
        if handle is None:
            m.diagnostics.append(
                f"callback {cb} added to unknown subscription object {sub_object}")
            continue
        _set(m.subscriptions[handle], "callback", cb, "subscription")
        own(cb, "subscription", handle)

    for table in (m.subscriptions, m.timers, m.services):
        for obj in table.values():
            if obj.callback is not None:
                obj.symbol = m.symbols.get(obj.callback, "")

    _diagnose(m)
    return m


def _diagnose(m: SystemModel) -> None:
    for s in m.subscriptions.values():
        if s.topic is None:
            m.diagnostics.append(f"subscription {s.handle}: no core_subscription_init")
        if s.sub_object is None:
            m.diagnostics.append(f"subscription {s.handle}: missing api_subscription_init, no callback")
        elif s.callback is None:
            m.diagnostics.append(f"subscription {s.handle}: no callback added")
        if s.node is not None and s.node not in m.nodes:
            m.diagnostics.append(f"subscription {s.handle}: unknown node {s.node}")
        if s.callback is not None and not s.symbol:
            m.diagnostics.append(f"subscription {s.handle}: callback {s.callback} never registered")
    for p in m.publishers.values():
        if p.topic is None:
            m.diagnostics.append(f"publisher {p.handle}: no core_publisher_init")
        elif p.node not in m.nodes:
            m.diagnostics.append(f"publisher {p.handle}: unknown node {p.node}")
    for t in m.timers.values():
        if t.period_ns is None:
            m.diagnostics.append(f"timer {t.handle}: no core_timer_init")
        if t.callback is None:
            m.diagnostics.append(f"timer {t.handle}: no callback added")
        if t.node is None:
            m.diagnostics.append(f"timer {t.handle}: not linked to a node")
        elif t.node not in m.nodes:
            m.diagnostics.append(f"timer {t.handle}: unknown node {t.node}")


def unresolved_handles(model: SystemModel, events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Runtime events whose object handle does not resolve against ``model``.

    Message handles are per-message tokens and are not part of the model.
    """
    callbacks = model.callback_owners
    waitables = set(model.subscriptions) | set(model.timers) | set(model.services)
    bad = []
    for ev in events:
        tp = ev.tracepoint
        if tp in (TP.callback_start, TP.callback_end):
            ok = ev.payload[0] in callbacks
        elif tp == TP.core_publish:
            ok = ev.payload[0] in model.publishers
        elif tp == TP.transport_take:
            ok = ev.payload[0] in model.subscriptions
        elif tp == TP.api_executor_execute:
            ok = ev.payload[0] in waitables
        elif tp == TP.core_lifecycle_transition:
            ok = ev.payload[0] in model.lifecycles
        else:
            continue
        if not ok:
            bad.append(ev)
    return bad
