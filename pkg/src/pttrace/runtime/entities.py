"""Context, nodes and the objects they own.

Every constructor here emits the initialization tracepoints that let an
analysis rebuild the object graph later; publish emits the three
publish-path runtime points.  The transport is a set of bounded
in-process queues, one per subscription.
"""

from __future__ import annotations

import itertools
import os
import threading
import time
import uuid
from collections import deque
from concurrent.futures import Future
from typing import Any, Callable

from .. import __version__
from ..errors import (DuplicateNodeName, IllegalTransition, InactiveLifecycleNode,
                      InvalidPeriod, UnknownNode, UnknownService)
from ..recorder import tracer
from ..trace_model import TracepointId as TP
from .lifecycle import LifecycleStateMachine, State, next_state

_API_PUBLISH = TP.api_publish
_CORE_PUBLISH = TP.core_publish
_TRANSPORT_PUBLISH = TP.transport_publish

_monotonic_ns = time.monotonic_ns

# Seeded with the pid so handles from different processes never collide
# once their traces are merged.
_handles = itertools.count(((os.getpid() & 0xFFFFFFFF) << 32) + 1)


def new_handle() -> int:
    return next(_handles)


def _new_gid() -> int:
    return uuid.uuid4().int & 0xFFFFFFFFFFFFFFFF


def _symbol_of(callback: Callable, symbol: str | None) -> str:
    if symbol is not None:
        return symbol
    return getattr(callback, "__qualname__", None) or repr(callback)


class Context:
    """Process-level runtime state: node registry, topic and service maps."""

    def __init__(self, tool_version: str = __version__):
        self.handle = new_handle()
        self._nodes: dict[tuple[str, str], Node] = {}
        self._topics: dict[str, list[Subscription]] = {}
        self._services: dict[str, Service] = {}
        self._lock = threading.Lock()
        self.ok = True
        tracer.emit(TP.core_init, (self.handle, tool_version))

    def create_node(self, name: str, namespace: str = "/", *, lifecycle: bool = False) -> Node:
        key = (namespace, name)
        with self._lock:
            if key in self._nodes:
                raise DuplicateNodeName(f"node {namespace!r}/{name!r} already exists")
            node = Node(self, name, namespace)
            self._nodes[key] = node
        tracer.emit(TP.core_node_init, (node.handle, node.transport_handle, name, namespace))
        if lifecycle:
            node.lifecycle = LifecycleStateMachine(new_handle())
            tracer.emit(TP.core_lifecycle_state_machine_init, (node.handle, node.lifecycle.handle))
        return node

    @property
    def nodes(self) -> list[Node]:
        return list(self._nodes.values())

    def subscriptions_for(self, topic: str) -> list[Subscription]:
        return self._topics.get(topic, [])

    def shutdown(self) -> None:
        self.ok = False
        self._nodes.clear()


class Node:
    def __init__(self, context: Context, name: str, namespace: str):
        self.context = context
        self.name = name
        self.namespace = namespace
        self.handle = new_handle()
        self.transport_handle = new_handle()
        self.lifecycle: LifecycleStateMachine | None = None
        self.publishers: list[Publisher] = []
        self.subscriptions: list[Subscription] = []
        self.timers: list[Timer] = []
        self.services: list[Service] = []
        self.clients: list[Client] = []

    def __repr__(self):
        return f"<Node {self.namespace}{'' if self.namespace.endswith('/') else '/'}{self.name}>"

    def _check_alive(self) -> None:
        if self.context._nodes.get((self.namespace, self.name)) is not self:
            raise UnknownNode(f"{self!r} is not registered in its context")

    def create_publisher(self, topic: str, queue_depth: int = 10) -> Publisher:
        self._check_alive()
        if not topic:
            raise ValueError("topic must be non-empty")
        if queue_depth < 1:
            raise ValueError("queue_depth must be positive")
        pub = Publisher(self, topic, queue_depth)
        # transport and core layers share the publisher's identity handle
        tracer.emit(TP.transport_publisher_init, (pub.handle, pub.gid))
        tracer.emit(TP.core_publisher_init, (pub.handle, self.handle, topic, queue_depth))
        self.publishers.append(pub)
        return pub

    def create_subscription(self, topic: str, callback: Callable[[bytes], Any],
                            queue_depth: int = 10, symbol: str | None = None) -> Subscription:
        self._check_alive()
        if not topic:
            raise ValueError("topic must be non-empty")
        if queue_depth < 1:
            raise ValueError("queue_depth must be positive")
        sub = Subscription(self, topic, queue_depth, callback, _symbol_of(callback, symbol))
        emit = tracer.emit
        emit(TP.transport_subscription_init, (sub.handle, sub.gid))
        emit(TP.core_subscription_init, (sub.handle, self.handle, topic, queue_depth))
        emit(TP.api_subscription_init, (sub.handle, sub.object_handle))
        emit(TP.api_subscription_callback_added, (sub.object_handle, sub.callback_handle))
        emit(TP.api_callback_register, (sub.callback_handle, sub.symbol))
        with self.context._lock:
            self.context._topics.setdefault(topic, []).append(sub)
        self.subscriptions.append(sub)
        return sub

    def create_timer(self, period_ns: int, callback: Callable[[], Any],
                     symbol: str | None = None) -> Timer:
        self._check_alive()
        if not isinstance(period_ns, int) or period_ns <= 0:
            raise InvalidPeriod(f"timer period must be a positive number of ns, got {period_ns!r}")
        timer = Timer(self, period_ns, callback, _symbol_of(callback, symbol))
        emit = tracer.emit
        emit(TP.core_timer_init, (timer.handle, period_ns))
        emit(TP.api_timer_callback_added, (timer.handle, timer.callback_handle))
        emit(TP.api_callback_register, (timer.callback_handle, timer.symbol))
        emit(TP.api_timer_link_node, (timer.handle, self.handle))
        self.timers.append(timer)
        return timer

    def create_service(self, name: str, callback: Callable[[Any], Any],
                       symbol: str | None = None) -> Service:
        self._check_alive()
        srv = Service(self, name, callback, _symbol_of(callback, symbol))
        emit = tracer.emit
        emit(TP.core_service_init, (srv.handle, self.handle, srv.transport_handle, name))
        emit(TP.api_service_callback_added, (srv.handle, srv.callback_handle))
        emit(TP.api_callback_register, (srv.callback_handle, srv.symbol))
        with self.context._lock:
            self.context._services[name] = srv
        self.services.append(srv)
        return srv

    def create_client(self, name: str) -> Client:
        self._check_alive()
        client = Client(self, name)
        tracer.emit(TP.core_client_init, (client.handle, self.handle, client.transport_handle, name))
        self.clients.append(client)
        return client

    def transition(self, label: str) -> State:
        """Apply a lifecycle transition and return the new state."""
        sm = self.lifecycle
        if sm is None:
            raise IllegalTransition(f"{self!r} is not lifecycle-managed")
        start = sm.state
        goal = next_state(start, label)
        sm.state = goal
        tracer.emit(TP.core_lifecycle_transition, (sm.handle, start.value, goal.value))
        return goal


class _Waitable:
    """Anything an executor can find ready.  ``_wakers`` are executor events."""

    def __init__(self):
        self._wakers: list[Callable[[], None]] = []
        self.in_flight = False


class Publisher:
    def __init__(self, node: Node, topic: str, queue_depth: int):
        self.node = node
        self.topic = topic
        self.queue_depth = queue_depth
        self.handle = new_handle()
        self.gid = _new_gid()
        self._context = node.context

    def publish(self, message) -> int:
        """Publish ``message`` (bytes-like) and return its message handle."""
        sm = self.node.lifecycle
        if sm is not None and sm.state is not State.ACTIVE:
            raise InactiveLifecycleNode(
                f"cannot publish on {self.topic!r}: {self.node!r} is {sm.state.value}")
        mh = next(_handles)
        emit = tracer.emit
        emit(_API_PUBLISH, (mh,))
        emit(_CORE_PUBLISH, (self.handle, mh))
        data = bytes(message)
        emit(_TRANSPORT_PUBLISH, (mh,))
        item = (mh, data, _monotonic_ns())
        for sub in self._context._topics.get(self.topic, ()):
            sub._deliver(item)
        return mh


class Subscription(_Waitable):
    def __init__(self, node: Node, topic: str, queue_depth: int,
                 callback: Callable[[bytes], Any], symbol: str):
        super().__init__()
        self.node = node
        self.topic = topic
        self.queue_depth = queue_depth
        self.callback = callback
        self.symbol = symbol
        self.handle = new_handle()
        self.object_handle = new_handle()
        self.callback_handle = new_handle()
        self.gid = _new_gid()
        self.queue: deque = deque(maxlen=queue_depth)
        self.dropped = 0

    def _deliver(self, item) -> None:
        q = self.queue
        if len(q) == q.maxlen:
            self.dropped += 1
        q.append(item)
        for w in self._wakers:
            w()

    def is_ready(self, now_ns: int) -> bool:
        return bool(self.queue) and not self.in_flight


class Timer(_Waitable):
    def __init__(self, node: Node, period_ns: int, callback: Callable[[], Any], symbol: str):
        super().__init__()
        self.node = node
        self.period_ns = period_ns
        self.callback = callback
        self.symbol = symbol
        self.handle = new_handle()
        self.callback_handle = new_handle()
        self.next_due_ns = _monotonic_ns() + period_ns

    def is_ready(self, now_ns: int) -> bool:
        return now_ns >= self.next_due_ns and not self.in_flight

    def reset(self, now_ns: int | None = None) -> None:
        now = _monotonic_ns() if now_ns is None else now_ns
        self.next_due_ns = now + self.period_ns

    def _advance(self, now_ns: int) -> None:
        # stay on the period grid; missed periods are skipped, not replayed
        missed = (now_ns - self.next_due_ns) // self.period_ns + 1
        self.next_due_ns += max(missed, 1) * self.period_ns


class Service(_Waitable):
    def __init__(self, node: Node, name: str, callback: Callable[[Any], Any], symbol: str):
        super().__init__()
        self.node = node
        self.name = name
        self.callback = callback
        self.symbol = symbol
        self.handle = new_handle()
        self.transport_handle = new_handle()
        self.callback_handle = new_handle()
        self.requests: deque = deque()

    def _deliver(self, item) -> None:
        self.requests.append(item)
        for w in self._wakers:
            w()

    def is_ready(self, now_ns: int) -> bool:
        return bool(self.requests) and not self.in_flight


class Client:
    def __init__(self, node: Node, name: str):
        self.node = node
        self.name = name
        self.handle = new_handle()
        self.transport_handle = new_handle()

    def call_async(self, request) -> Future:
        service = self.node.context._services.get(self.name)
        if service is None:
            raise UnknownService(f"no service named {self.name!r}")
        fut: Future = Future()
        service._deliver((request, fut, _monotonic_ns()))
        return fut

    def call(self, request, timeout: float | None = None):
        """Block until an executor spinning the service's node answers."""
        return self.call_async(request).result(timeout)
