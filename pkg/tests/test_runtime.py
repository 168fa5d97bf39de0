import threading
import time
from collections import Counter

import pytest

from pttrace.errors import (DuplicateNodeName, IllegalTransition, InactiveLifecycleNode,
                            InvalidPeriod, NoNodes, UnknownNode, UnknownService)
from pttrace.runtime import (Context, MultiThreadedExecutor, SingleThreadedExecutor, State)
from pttrace.testing import assert_event_order, run_and_trace
from pttrace.trace_model import HotPath, TracepointId as TP, descriptor_of

PUBLISH_PATH = {tp for tp in TP if descriptor_of(tp).hot_path is HotPath.PUBLISH}
RECEIVE_PATH = {tp for tp in TP if descriptor_of(tp).hot_path is HotPath.RECEIVE}


class TestNodes:
    def test_create_node_event(self):
        r = run_and_trace(lambda: Context().create_node("talker", "/"))
        (ev,) = r.of(TP.core_node_init)
        assert ev.payload[2:] == ("talker", "/")
        assert r.events[0].tracepoint is TP.core_init

    def test_duplicate_name(self):
        ctx = Context()
        ctx.create_node("a")
        with pytest.raises(DuplicateNodeName):
            ctx.create_node("a")
        ctx.create_node("a", "/other")

    def test_distinct_handles(self):
        ctx = Context()
        a, b = ctx.create_node("a"), ctx.create_node("b")
        assert a.handle != b.handle

    def test_unknown_node_after_shutdown(self):
        ctx = Context()
        n = ctx.create_node("a")
        ctx.shutdown()
        with pytest.raises(UnknownNode):
            n.create_publisher("x")


class TestInitChains:
    def test_publisher_events(self):
        def work():
            n = Context().create_node("n")
            return [n.create_publisher("chatter") for _ in range(3)], n

        r = run_and_trace(work)
        pubs, node = r.value
        assert r.count(TP.core_publisher_init) == 3 == r.count(TP.transport_publisher_init)
        cores = r.of(TP.core_publisher_init)
        assert {e.payload[0] for e in cores} == {p.handle for p in pubs}
        assert {e.payload[1] for e in cores} == {node.handle}
        assert all(e.payload[2] == "chatter" for e in cores)
        assert assert_event_order(r, ["transport_publisher_init", "core_publisher_init"])

    def test_subscription_chain(self):
        def work():
            n = Context().create_node("n")
            return n.create_subscription("chatter", lambda m: None, symbol="on_msg")

        r = run_and_trace(work)
        sub = r.value
        names = [e.tracepoint for e in r.events][2:]
        assert names == [TP.transport_subscription_init, TP.core_subscription_init,
                         TP.api_subscription_init, TP.api_subscription_callback_added,
                         TP.api_callback_register]
        t, c, a, added, reg = r.events[2:]
        assert t.payload[0] == c.payload[0] == a.payload[0] == sub.handle
        assert a.payload[1] == added.payload[0]
        assert added.payload[1] == reg.payload[0]
        assert reg.payload[1] == "on_msg"

    def test_timer_chain(self):
        def work():
            n = Context().create_node("n")
            return n.create_timer(100_000_000, lambda: None, symbol="tick")

        r = run_and_trace(work)
        timer = r.value
        (init,) = r.of(TP.core_timer_init)
        assert init.payload == (timer.handle, 100_000_000)
        assert r.of(TP.api_timer_callback_added)[0].payload[0] == timer.handle
        assert r.of(TP.api_timer_link_node)[0].payload[0] == timer.handle

    @pytest.mark.parametrize("period", [0, -5, 1.5])
    def test_invalid_period(self, period):
        n = Context().create_node("n")
        with pytest.raises(InvalidPeriod):
            n.create_timer(period, lambda: None)


def _pubsub(n_msgs, depth=None, spin=True):
    ctx = Context()
    a, b = ctx.create_node("talker"), ctx.create_node("listener")
    pub = a.create_publisher("chatter")
    got = []
    b.create_subscription("chatter", got.append, queue_depth=depth or n_msgs)
    for i in range(n_msgs):
        pub.publish(b"m%d" % i)
    if spin:
        ex = SingleThreadedExecutor(wait_timeout_ns=10_000_000)
        ex.add_node(b)
        ex.spin(work_count=n_msgs, duration_s=10)
    return got


class TestPublishReceive:
    def test_one_message_event_order(self):
        r = run_and_trace(lambda: _pubsub(1))
        assert r.value == [b"m0"]
        assert r.count(TP.api_publish) == r.count(TP.core_publish) == r.count(TP.transport_publish) == 1
        assert sum(r.count(tp) for tp in RECEIVE_PATH) == 7
        assert assert_event_order(r, [
            "api_executor_wait_for_work", "api_executor_get_next_ready", "api_executor_execute",
            "transport_take", "core_take", "api_take", "callback_start", "callback_end"])
        assert assert_event_order(r, ["api_publish", "core_publish", "transport_publish"])
        assert not assert_event_order(r, ["transport_publish", "api_publish"])

    def test_message_handles_consistent(self):
        r = run_and_trace(lambda: _pubsub(3))
        pub_msgs = [e.payload[0] for e in r.of(TP.api_publish)]
        assert [e.payload[1] for e in r.of(TP.core_publish)] == pub_msgs
        assert [e.payload[0] for e in r.of(TP.transport_publish)] == pub_msgs
        assert [e.payload[1] for e in r.of(TP.transport_take)] == pub_msgs
        assert [e.payload[0] for e in r.of(TP.api_take)] == pub_msgs

    def test_no_subscriber(self):
        def work():
            Context().create_node("n").create_publisher("void").publish(b"x")

        r = run_and_trace(work)
        c = r.counts()
        assert sum(c[tp] for tp in PUBLISH_PATH) == 3
        assert sum(c[tp] for tp in RECEIVE_PATH) == 0

    def test_queue_depth_drops_oldest(self):
        ctx = Context()
        a = ctx.create_node("a")
        pub = a.create_publisher("t")
        got = []
        sub = a.create_subscription("t", got.append, queue_depth=1)

        def work():
            pub.publish(b"old")
            pub.publish(b"new")
            ex = SingleThreadedExecutor(wait_timeout_ns=1_000_000)
            ex.add_node(a)
            ex.spin(duration_s=0.05)

        r = run_and_trace(work)
        assert got == [b"new"]
        assert sub.dropped == 1
        assert r.count(TP.callback_start) == 1

    def test_topic_isolation(self):
        ctx = Context()
        n = ctx.create_node("n")
        pa = n.create_publisher("a")
        got_a, got_b = [], []
        n.create_subscription("a", got_a.append)
        n.create_subscription("b", got_b.append)
        pa.publish(b"x")
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        ex.spin(work_count=1, duration_s=5)
        assert got_a == [b"x"] and got_b == []

    def test_publish_copies(self):
        ctx = Context()
        n = ctx.create_node("n")
        pub = n.create_publisher("t")
        got = []
        n.create_subscription("t", got.append)
        buf = bytearray(b"abc")
        pub.publish(buf)
        buf[0] = ord("z")
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        ex.spin(work_count=1, duration_s=5)
        assert got == [b"abc"]

    def test_backend_swap_transparency(self):
        bare = _pubsub(50)
        traced = run_and_trace(lambda: _pubsub(50)).value
        nulled = run_and_trace(lambda: _pubsub(50), ["pt:nothing"]).value
        assert bare == traced == nulled


class TestTimers:
    def test_timer_fires_on_grid(self):
        ctx = Context()
        n = ctx.create_node("n")
        fired = []
        n.create_timer(20_000_000, lambda: fired.append(time.monotonic_ns()))
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        ex.spin(duration_s=0.25)
        assert 9 <= len(fired) <= 13
        gaps = [b - a for a, b in zip(fired, fired[1:])]
        assert min(gaps) > 10_000_000

    def test_late_timer_skips_missed_periods(self):
        ctx = Context()
        n = ctx.create_node("n")
        fired = []

        def slow():
            fired.append(time.monotonic_ns())
            if len(fired) == 1:
                time.sleep(0.055)

        n.create_timer(10_000_000, slow)
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        ex.spin(duration_s=0.12)
        # a burst would replay ~5 firings back to back after the stall
        gaps = [b - a for a, b in zip(fired, fired[1:])]
        assert all(g > 3_000_000 for g in gaps[1:])

    def test_timer_execute_then_callback(self):
        def work():
            n = Context().create_node("n")
            t = n.create_timer(1_000_000, lambda: None)
            ex = SingleThreadedExecutor()
            ex.add_node(n)
            ex.spin(work_count=3, duration_s=5)
            return t

        r = run_and_trace(work)
        t = r.value
        assert assert_event_order(r, ["api_executor_execute", "callback_start", "callback_end"])
        assert {e.payload for e in r.of(TP.callback_start)} == {(t.callback_handle, False)}
        assert r.count(TP.callback_start) == 3
        assert all(e.payload == (t.handle,) for e in r.of(TP.api_executor_execute))


class TestServices:
    def test_call_round_trip(self):
        def work():
            ctx = Context()
            server = ctx.create_node("server")
            srv = server.create_service("add", lambda req: req[0] + req[1], symbol="add_cb")
            client = ctx.create_node("client").create_client("add")
            ex = SingleThreadedExecutor()
            ex.add_node(server)
            stop = threading.Event()
            th = threading.Thread(target=ex.spin, kwargs={"stop_event": stop, "duration_s": 10})
            th.start()
            try:
                return srv, client.call((2, 3), timeout=5)
            finally:
                stop.set()
                ex.shutdown()
                th.join()

        r = run_and_trace(work)
        srv, answer = r.value
        assert answer == 5
        starts = r.of(TP.callback_start)
        assert [e.payload for e in starts] == [(srv.callback_handle, False)]
        assert r.count(TP.callback_end) == 1
        (init,) = r.of(TP.core_service_init)
        assert init.payload[0] == srv.handle == r.of(TP.api_service_callback_added)[0].payload[0]
        assert r.count(TP.core_client_init) == 1

    def test_service_error_goes_to_caller(self):
        ctx = Context()
        n = ctx.create_node("n")

        def bad(req):
            raise ValueError("boom")

        n.create_service("bad", bad)
        fut = n.create_client("bad").call_async(1)
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        ex.spin(work_count=1, duration_s=5)
        with pytest.raises(ValueError):
            fut.result(0)

    def test_unknown_service(self):
        n = Context().create_node("n")
        with pytest.raises(UnknownService):
            n.create_client("missing").call(1, timeout=1)


class TestLifecycle:
    def test_walk(self):
        def work():
            n = Context().create_node("m", lifecycle=True)
            states = [n.transition(t) for t in ("configure", "activate", "deactivate", "cleanup")]
            return n, states

        r = run_and_trace(work)
        n, states = r.value
        assert states == [State.INACTIVE, State.ACTIVE, State.INACTIVE, State.UNCONFIGURED]
        labels = [e.payload[1:] for e in r.of(TP.core_lifecycle_transition)]
        assert labels == [("unconfigured", "inactive"), ("inactive", "active"),
                          ("active", "inactive"), ("inactive", "unconfigured")]
        (init,) = r.of(TP.core_lifecycle_state_machine_init)
        assert init.payload == (n.handle, n.lifecycle.handle)

    def test_illegal(self):
        n = Context().create_node("m", lifecycle=True)
        n.transition("configure")
        n.transition("activate")
        with pytest.raises(IllegalTransition):
            n.transition("configure")
        with pytest.raises(IllegalTransition):
            n.transition("warp")
        n.transition("shutdown")
        assert n.lifecycle.state is State.FINALIZED
        with pytest.raises(IllegalTransition):
            n.transition("shutdown")

    def test_plain_node_has_no_lifecycle(self):
        with pytest.raises(IllegalTransition):
            Context().create_node("p").transition("configure")

    @pytest.mark.parametrize("walk", [[], ["configure"], ["configure", "activate", "deactivate"]])
    def test_inactive_publish_blocked(self, walk):
        def work():
            n = Context().create_node("m", lifecycle=True)
            pub = n.create_publisher("t")
            for t in walk:
                n.transition(t)
            with pytest.raises(InactiveLifecycleNode):
                pub.publish(b"x")

        r = run_and_trace(work)
        assert sum(r.count(tp) for tp in PUBLISH_PATH) == 0

    def test_active_publish_allowed(self):
        def work():
            n = Context().create_node("m", lifecycle=True)
            pub = n.create_publisher("t")
            n.transition("configure")
            n.transition("activate")
            pub.publish(b"x")

        assert run_and_trace(work).count(TP.api_publish) == 1


class TestExecutors:
    def test_no_nodes(self):
        with pytest.raises(NoNodes):
            SingleThreadedExecutor().spin(duration_s=0.01)

    def test_spin_once(self):
        got = _pubsub(2, spin=False)
        ctx = Context()
        n = ctx.create_node("n")
        n.create_subscription("t", got.append)
        p = n.create_publisher("t")
        p.publish(b"a")
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        assert ex.spin_once(1_000_000) is True
        assert ex.spin_once(1_000_000) is False
        assert got == [b"a"]

    def test_callback_error_propagates(self):
        ctx = Context()
        n = ctx.create_node("n")

        def boom():
            raise RuntimeError("x")

        n.create_timer(1_000_000, boom)
        ex = SingleThreadedExecutor()
        ex.add_node(n)
        with pytest.raises(RuntimeError):
            ex.spin(duration_s=1)

    def test_multithreaded_exactly_once(self):
        N = 200

        def work():
            ctx = Context()
            n = ctx.create_node("n")
            pubs = [n.create_publisher(t) for t in ("a", "b")]
            seen = Counter()
            lock = threading.Lock()

            def make(topic):
                def cb(m):
                    time.sleep(0.0002)
                    with lock:
                        seen[(topic, m)] += 1
                return cb

            for t in ("a", "b"):
                n.create_subscription(t, make(t), queue_depth=N)
            for i in range(N // 2):
                for p in pubs:
                    p.publish(b"%d" % i)
            ex = MultiThreadedExecutor(num_threads=2)
            ex.add_node(n)
            ex.spin(work_count=N, duration_s=20)
            return seen

        r = run_and_trace(work)
        seen = r.value
        assert len(seen) == N and set(seen.values()) == {1}
        assert r.count(TP.callback_start) == N
        # no callback overlaps itself on one thread
        open_ = {}
        for e in sorted(r.events, key=lambda e: (e.thread_id, e.seq)):
            if e.tracepoint == TP.callback_start:
                assert open_.get(e.thread_id) is None
                open_[e.thread_id] = e.payload[0]
            elif e.tracepoint == TP.callback_end:
                assert open_.pop(e.thread_id) == e.payload[0]
        assert len({e.thread_id for e in r.of(TP.callback_start)}) >= 1
