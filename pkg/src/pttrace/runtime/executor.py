"""Callback executors.

Each worker loops: emit ``wait_for_work``, block until something is
ready (or the timeout passes), emit ``get_next_ready``, pick one unit,
emit ``execute`` and run it.  Subscription units emit the three take
points before the callback.  Timers are picked before subscriptions and
services; within a kind the oldest pending work goes first.

A unit is never executed by two workers at once (``in_flight``).
"""

from __future__ import annotations

import threading
import time

from ..errors import NoNodes
from ..recorder import tracer
from ..trace_model import TracepointId as TP
from .entities import Node, Service, Subscription, Timer

DEFAULT_WAIT_TIMEOUT_NS = 100_000_000

_WAIT = TP.api_executor_wait_for_work
_NEXT = TP.api_executor_get_next_ready
_EXEC = TP.api_executor_execute
_T_TAKE = TP.transport_take
_C_TAKE = TP.core_take
_A_TAKE = TP.api_take
_CB_START = TP.callback_start
_CB_END = TP.callback_end

_monotonic_ns = time.monotonic_ns


class Executor:
    """Runs callbacks of the added nodes on ``num_threads`` worker threads."""

    def __init__(self, num_threads: int = 1, wait_timeout_ns: int = DEFAULT_WAIT_TIMEOUT_NS):
        if num_threads < 1:
            raise ValueError("num_threads must be positive")
        self.num_threads = num_threads
        self.wait_timeout_ns = wait_timeout_ns
        self._nodes: list[Node] = []
        self._event = threading.Event()
        self._select_lock = threading.Lock()
        self._shutdown = False
        self._timers: list[Timer] = []
        self._queued: list[Subscription | Service] = []
        self._started = 0
        self.executed = 0
        self._error: BaseException | None = None

    def add_node(self, node: Node) -> None:
        self._nodes.append(node)
        for w in node.subscriptions + node.services:
            w._wakers.append(self._event.set)

    @property
    def nodes(self) -> list[Node]:
        return list(self._nodes)

    def shutdown(self) -> None:
        self._shutdown = True
        self._event.set()

    def wake(self) -> None:
        self._event.set()

    def spin(self, *, duration_s: float | None = None, work_count: int | None = None,
             stop_event: threading.Event | None = None) -> int:
        """Run until the deadline, ``work_count`` executed units, a set
        ``stop_event`` or :meth:`shutdown`.  Returns units executed by
        this call.
        """
        if not self._nodes:
            raise NoNodes("executor has no nodes")
        self._shutdown = False
        self._error = None
        self._timers = [t for n in self._nodes for t in n.timers]
        self._queued = [w for n in self._nodes for w in n.subscriptions + n.services]
        self._started = 0
        deadline = None if duration_s is None else _monotonic_ns() + int(duration_s * 1e9)
        args = (deadline, work_count, stop_event)

        workers = [threading.Thread(target=self._worker, args=args, daemon=True,
                                    name=f"executor-{i}")
                   for i in range(1, self.num_threads)]
        for w in workers:
            w.start()
        try:
            self._worker(*args)
        finally:
            self.shutdown()
            for w in workers:
                w.join()
        if self._error is not None:
            raise self._error
        return self._started

    def spin_once(self, timeout_ns: int | None = None) -> bool:
        """One wait/select/execute round.  Returns whether a unit ran."""
        if not self._nodes:
            raise NoNodes("executor has no nodes")
        self._timers = [t for n in self._nodes for t in n.timers]
        self._queued = [w for n in self._nodes for w in n.subscriptions + n.services]
        return self._iteration(self.wait_timeout_ns if timeout_ns is None else timeout_ns, None)

    # -- internals ---------------------------------------------------------

    def _stop(self, deadline, work_count, stop_event) -> bool:
        if self._shutdown or self._error is not None:
            return True
        if stop_event is not None and stop_event.is_set():
            return True
        if work_count is not None and self._started >= work_count:
            return True
        return deadline is not None and _monotonic_ns() >= deadline

    def _worker(self, deadline, work_count, stop_event) -> None:
        try:
            while not self._stop(deadline, work_count, stop_event):
                timeout = self.wait_timeout_ns
                if deadline is not None:
                    timeout = max(0, min(timeout, deadline - _monotonic_ns()))
                self._iteration(timeout, work_count)
        except BaseException as exc:
            self._error = exc
            self.shutdown()

    def _any_ready(self, now: int) -> bool:
        for t in self._timers:
            if t.is_ready(now):
                return True
        for w in self._queued:
            if w.is_ready(now):
                return True
        return False

    def _next_timer_in(self, now: int) -> int | None:
        due = [t.next_due_ns - now for t in self._timers if not t.in_flight]
        return max(0, min(due)) if due else None

    def _iteration(self, timeout_ns: int, work_count: int | None) -> bool:
        emit = tracer.emit
        now = _monotonic_ns()
        until_timer = self._next_timer_in(now)
        if until_timer is not None:
            timeout_ns = min(timeout_ns, until_timer)
        emit(_WAIT, (timeout_ns,))
        self._event.clear()
        if not self._any_ready(now) and not self._shutdown:
            self._event.wait(timeout_ns / 1e9)
        emit(_NEXT, ())
        unit = self._select(work_count)
        if unit is None:
            return False
        self._run(unit, emit)
        return True

    def _select(self, work_count):
        with self._select_lock:
            if work_count is not None and self._started >= work_count:
                return None
            now = _monotonic_ns()
            best_timer = None
            for t in self._timers:
                if t.is_ready(now) and (best_timer is None or t.next_due_ns < best_timer.next_due_ns):
                    best_timer = t
            if best_timer is not None:
                best_timer.in_flight = True
                best_timer._advance(now)
                self._started += 1
                return best_timer, None
            best, best_ts = None, None
            for w in self._queued:
                if w.in_flight:
                    continue
                q = w.queue if isinstance(w, Subscription) else w.requests
                if q:
                    ts = q[0][2]
                    if best is None or ts < best_ts:
                        best, best_ts = w, ts
            if best is None:
                return None
            q = best.queue if isinstance(best, Subscription) else best.requests
            item = q.popleft()
            best.in_flight = True
            self._started += 1
            return best, item

    def _run(self, unit, emit) -> None:
        waitable, item = unit
        try:
            emit(_EXEC, (waitable.handle,))
            if item is None:
                cb = waitable.callback_handle
                emit(_CB_START, (cb, False))
                try:
                    waitable.callback()
                finally:
                    emit(_CB_END, (cb,))
            elif isinstance(waitable, Subscription):
                mh, data, src_ts = item
                emit(_T_TAKE, (waitable.handle, mh, src_ts, True))
                emit(_C_TAKE, (mh,))
                emit(_A_TAKE, (mh,))
                cb = waitable.callback_handle
                emit(_CB_START, (cb, True))
                try:
                    waitable.callback(data)
                finally:
                    emit(_CB_END, (cb,))
            else:
                request, fut, _ = item
                cb = waitable.callback_handle
                emit(_CB_START, (cb, False))
                try:
                    response = waitable.callback(request)
                except Exception as exc:
                    emit(_CB_END, (cb,))
                    fut.set_exception(exc)
                else:
                    emit(_CB_END, (cb,))
                    fut.set_result(response)
        finally:
            waitable.in_flight = False
            self.executed += 1
            if self.num_threads > 1:
                self._event.set()


class SingleThreadedExecutor(Executor):
    def __init__(self, wait_timeout_ns: int = DEFAULT_WAIT_TIMEOUT_NS):
        super().__init__(1, wait_timeout_ns)


class MultiThreadedExecutor(Executor):
    def __init__(self, num_threads: int = 2, wait_timeout_ns: int = DEFAULT_WAIT_TIMEOUT_NS):
        super().__init__(num_threads, wait_timeout_ns)
