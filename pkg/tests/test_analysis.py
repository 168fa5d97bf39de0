import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pttrace.analysis import _kernels as K
from pttrace.analysis.metrics import (Summary, callback_instances, io_linkage,
                                      message_latencies, timer_stats)
from pttrace.analysis.model import build_model, unresolved_handles
from pttrace.analysis.report import CSV_HEADER, analyze, render, write_report
from pttrace.errors import InconsistentTrace, UnknownTimer
from pttrace.fixtures import build_system
from pttrace.runtime import Context, MultiThreadedExecutor
from pttrace.testing import run_and_trace
from pttrace.trace_model import TraceEvent
from pttrace.trace_model import TracepointId as TP

from _oracles import brute_latencies, brute_pairing, random_trace, to_packets


class Builder:
    """Hand-built traces with explicit timestamps."""

    def __init__(self):
        self.events = []
        self.seq = {}

    def add(self, tp, payload, ts, tid=1):
        s = self.seq.get(tid, 0)
        self.seq[tid] = s + 1
        self.events.append(TraceEvent(tp, ts, tid, s, tuple(payload)))
        return self

    def node(self, h=1, name="n"):
        return self.add(TP.core_node_init, (h, h + 100, name, "/"), 0)

    def timer(self, h=10, cb=11, period=100_000_000, node=1, symbol="tick"):
        self.add(TP.core_timer_init, (h, period), 0)
        self.add(TP.api_timer_callback_added, (h, cb), 0)
        self.add(TP.api_timer_link_node, (h, node), 0)
        return self.add(TP.api_callback_register, (cb, symbol), 0)

    def publisher(self, h, topic, node=1):
        self.add(TP.transport_publisher_init, (h, h + 1), 0)
        return self.add(TP.core_publisher_init, (h, node, topic, 10), 0)

    def subscription(self, h, topic, cb, node=1, symbol="on_msg"):
        self.add(TP.transport_subscription_init, (h, h + 1), 0)
        self.add(TP.core_subscription_init, (h, node, topic, 10), 0)
        self.add(TP.api_subscription_init, (h, h + 2), 0)
        self.add(TP.api_subscription_callback_added, (h + 2, cb), 0)
        return self.add(TP.api_callback_register, (cb, symbol), 0)

    def publish(self, pub, msg, ts, tid=1):
        self.add(TP.api_publish, (msg,), ts, tid)
        self.add(TP.core_publish, (pub, msg), ts + 1, tid)
        return self.add(TP.transport_publish, (msg,), ts + 2, tid)

    def deliver(self, sub, cb, msg, ts, tid=2):
        self.add(TP.transport_take, (sub, msg, 0, 0), ts, tid)
        self.add(TP.callback_start, (cb, True), ts + 1, tid)
        return self.add(TP.callback_end, (cb,), ts + 2, tid)


class TestModel:
    def test_fixture_system(self):
        def work():
            nodes, spec = build_system(Context(), sensor_period_ns=5_000_000,
                                       fusion_period_ns=10_000_000)
            ex = MultiThreadedExecutor(num_threads=2)
            for n in nodes:
                ex.add_node(n)
            ex.spin(duration_s=0.1)
            return spec

        r = run_and_trace(work)
        spec, m = r.value, r.model
        c = m.counts()
        assert (c["nodes"], c["publishers"], c["subscriptions"], c["timers"]) == (2, 3, 3, 2)
        assert {n.name for n in m.nodes.values()} == spec.nodes
        assert {p.topic: m.node_name(p.node) for p in m.publishers.values()} == spec.publishers
        assert {s.symbol: (m.node_name(s.node), s.topic)
                for s in m.subscriptions.values()} == spec.subscriptions
        assert {t.symbol: t.period_ns for t in m.timers.values()} == spec.timers
        assert m.diagnostics == []
        assert unresolved_handles(m, r.events) == []

    def test_empty(self):
        m = build_model([])
        assert set(m.counts().values()) == {0}
        assert m.diagnostics == []

    def test_missing_api_subscription_init(self):
        b = Builder().node()
        b.add(TP.transport_subscription_init, (5, 6), 0)
        b.add(TP.core_subscription_init, (5, 1, "t", 10), 0)
        m = build_model(b.events)
        assert m.subscriptions[5].topic == "t"
        assert m.subscriptions[5].callback is None
        assert any("missing api_subscription_init" in d for d in m.diagnostics)

    def test_callback_added_before_subscription_object(self):
        b = Builder().node()
        b.add(TP.api_subscription_callback_added, (7, 9), 0)
        b.add(TP.core_subscription_init, (5, 1, "t", 10), 0)
        b.add(TP.api_subscription_init, (5, 7), 0)
        m = build_model(b.events)
        assert m.subscriptions[5].callback == 9
        assert m.callback_owners[9] == ("subscription", 5)

    def test_conflicting_init(self):
        b = Builder().node().publisher(5, "a")
        b.add(TP.core_publisher_init, (5, 1, "b", 10), 0)
        with pytest.raises(InconsistentTrace):
            build_model(b.events)

    def test_unresolved(self):
        b = Builder().node()
        b.add(TP.callback_start, (99, False), 5)
        m = build_model(b.events)
        assert [e.payload for e in unresolved_handles(m, b.events)] == [(99, False)]


class TestPairing:
    def test_simple(self):
        b = Builder()
        b.add(TP.callback_start, (1, False), 10).add(TP.callback_end, (1,), 30)
        p = callback_instances(None, b.events)
        (inst,) = p.instances
        assert (inst.callback, inst.duration_ns) == (1, 20)
        assert p.unmatched_starts == p.unmatched_ends == []

    def test_restart_leaves_lone_start(self):
        b = Builder()
        b.add(TP.callback_start, (1, False), 10)
        b.add(TP.callback_start, (1, False), 20)
        b.add(TP.callback_end, (1,), 30)
        b.add(TP.callback_end, (1,), 40)
        p = callback_instances(None, b.events)
        assert [(i.start_index, i.end_index) for i in p.instances] == [(1, 2)]
        assert p.unmatched_starts == [0] and p.unmatched_ends == [3]
        assert len(p.diagnostics) == 2

    def test_threads_do_not_pair(self):
        b = Builder()
        b.add(TP.callback_start, (1, False), 10, tid=1)
        b.add(TP.callback_end, (1,), 20, tid=2)
        p = callback_instances(None, b.events)
        assert p.instances == []

    @pytest.mark.parametrize("seed", range(5))
    def test_against_oracle(self, seed):
        ev = random_trace(seed, 3000)
        p = callback_instances(build_model(ev), ev)
        pairs, lone_s, lone_e = brute_pairing(ev)
        assert [(i.start_index, i.end_index) for i in p.instances] == pairs
        assert (p.unmatched_starts, p.unmatched_ends) == (lone_s, lone_e)


class TestLatency:
    def test_constructed(self):
        b = Builder().node().publisher(5, "t").subscription(20, "t", 21)
        b.publish(5, 1000, ts=100)
        b.deliver(20, 21, 1000, ts=150)
        m = build_model(b.events)
        res = message_latencies(m, b.events)
        (s,) = res.samples
        assert (s.publisher, s.subscription, s.message, s.latency_ns) == (5, 20, 1000, 51)

    def test_lost_take_is_diagnosed(self):
        b = Builder().node().publisher(5, "t").subscription(20, "t", 21)
        b.publish(5, 1000, ts=100)
        res = message_latencies(build_model(b.events), b.events)
        assert res.samples == []
        assert any("never taken" in d for d in res.diagnostics)

    def test_fan_out(self):
        b = Builder().node().publisher(5, "t")
        b.subscription(20, "t", 21).subscription(30, "t", 31)
        b.publish(5, 1000, ts=100)
        b.deliver(30, 31, 1000, ts=200, tid=3)
        b.deliver(20, 21, 1000, ts=300, tid=2)
        res = message_latencies(build_model(b.events), b.events)
        assert sorted((s.subscription, s.latency_ns) for s in res.samples) == [(20, 201), (30, 101)]

    @pytest.mark.parametrize("seed", range(5))
    def test_against_oracle(self, seed):
        ev = random_trace(100 + seed, 3000)
        m = build_model(ev)
        got = sorted((s.publisher, s.subscription, s.message, s.publish_ns, s.callback_start_ns)
                     for s in message_latencies(m, ev).samples)
        assert got == brute_latencies(m, ev)

    def test_runtime_trace(self):
        from test_runtime import _pubsub

        r = run_and_trace(lambda: _pubsub(20))
        res = message_latencies(r.model, r.events)
        assert len(res.samples) == 20
        assert all(s.latency_ns > 0 for s in res.samples)
        assert res.diagnostics == []


def _timer_trace(starts_ms, dur_ms=10):
    b = Builder().node().timer()
    for s in starts_ms:
        b.add(TP.callback_start, (11, False), int(s * 1e6))
        b.add(TP.callback_end, (11,), int((s + dur_ms) * 1e6))
    return b.events


class TestTimerStats:
    def test_grid(self):
        ev = _timer_trace([0, 100, 200])
        st_ = timer_stats(build_model(ev), ev, 10)
        assert st_.intervals_ns == [100_000_000, 100_000_000]
        assert st_.durations_ns == [10_000_000] * 3
        assert st_.interval_summary.mean == 100_000_000
        assert st_.interval_summary.std == 0

    def test_unknown(self):
        ev = _timer_trace([0])
        with pytest.raises(UnknownTimer):
            timer_stats(build_model(ev), ev, 12345)

    def test_single_firing(self):
        ev = _timer_trace([0])
        st_ = timer_stats(build_model(ev), ev, 10)
        assert st_.intervals_ns == [] and st_.interval_summary.count == 0


class TestIOLinkage:
    def _system(self):
        b = Builder().node().timer().publisher(5, "out").subscription(20, "in", 21)
        b.publisher(40, "in", node=1)
        return b

    def test_constructed(self):
        b = self._system()
        b.deliver(20, 21, 7, ts=1_000, tid=1)
        b.deliver(20, 21, 8, ts=2_000, tid=1)
        b.add(TP.callback_start, (11, False), 5_000)
        b.publish(5, 900, 5_100)
        b.add(TP.callback_end, (11,), 6_000)
        m = build_model(b.events)
        (link,) = io_linkage(m, b.events, 10)
        assert link.inputs == {"in": 8}
        assert link.input_ages_ns == {"in": 5_000 - 2_001}
        assert link.output == 900

    def test_drift_and_no_output(self):
        b = self._system()
        b.add(TP.callback_start, (11, False), 1_000)   # before any input
        b.add(TP.callback_end, (11,), 1_100)
        b.deliver(20, 21, 7, ts=2_000, tid=1)
        b.add(TP.callback_start, (11, False), 3_000)
        b.add(TP.callback_end, (11,), 3_100)
        b.publish(5, 900, 3_200)                       # after the firing ended
        m = build_model(b.events)
        first, second = io_linkage(m, b.events, 10)
        assert first.inputs == {} and first.output is None
        assert second.inputs == {"in": 7} and second.output is None

    def test_no_firings(self):
        b = self._system()
        assert io_linkage(build_model(b.events), b.events, 10) == []


class TestReport:
    def test_deterministic(self, tmp_path):
        ev = random_trace(7, 2000)
        a = render(analyze(ev))
        b = render(analyze(list(ev)))
        assert a == b
        j, c = write_report(tmp_path, ev)
        assert open(j).read() == a[0] and open(c).read() == a[1]
        doc = json.loads(a[0])
        assert doc["event_count"] == len(ev)

    def test_empty(self):
        text, csv = render(analyze([]))
        doc = json.loads(text)
        assert doc["event_count"] == 0
        assert set(doc["model"]["counts"].values()) == {0}
        assert csv.strip() == ",".join(CSV_HEADER)

    def test_timer_rows(self):
        ev = _timer_trace([0, 100, 200])
        res = analyze(ev, "tick")
        kinds = [r[0] for r in res["rows"]]
        assert kinds.count("interval") == 2 and kinds.count("duration") == 3

    def test_unknown_timer_symbol(self):
        with pytest.raises(UnknownTimer):
            analyze(_timer_trace([0]), "nope")


class TestKernels:
    @staticmethod
    def _targets(draw_groups, draw_pos):
        g = np.array(draw_groups, dtype=np.int64)
        p = np.array(draw_pos, dtype=np.int64)
        o = np.lexsort((p, g))
        return g[o], p[o]

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 60)), max_size=40, unique=True),
           st.lists(st.tuples(st.integers(0, 5), st.integers(0, 60)), max_size=30))
    def test_search_twins_and_oracle(self, targets, queries):
        tg, tp = self._targets([t[0] for t in targets], [t[1] for t in targets])
        qg = np.array([q[0] for q in queries], dtype=np.int64)
        qp = np.array([q[1] for q in queries], dtype=np.int64)
        fa_np, fa_jit = K.first_after_np(qg, qp, tg, tp), K.first_after_jit(qg, qp, tg, tp)
        lb_np, lb_jit = K.last_before_np(qg, qp, tg, tp), K.last_before_jit(qg, qp, tg, tp)
        assert fa_np.tolist() == fa_jit.tolist()
        assert lb_np.tolist() == lb_jit.tolist()
        for i, (g, p) in enumerate(queries):
            after = [j for j in range(len(tg)) if tg[j] == g and tp[j] > p]
            before = [j for j in range(len(tg)) if tg[j] == g and tp[j] < p]
            assert fa_np[i] == (after[0] if after else -1)
            assert lb_np[i] == (before[-1] if before else -1)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=50))
    def test_pair_twins(self, seq):
        s = np.array([x[0] for x in seq], dtype=bool)
        g = np.array([x[1] for x in seq], dtype=np.int64)
        assert K.pair_adjacent_np(s, g).tolist() == K.pair_adjacent_jit(s, g).tolist()

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-10**9, 10**9), max_size=60))
    def test_summarize_twins(self, xs):
        a, b = K.summarize_np(np.array(xs, float)), K.summarize_jit(np.array(xs, float))
        assert a[0] == b[0]
        assert np.allclose(a[1:], b[1:], rtol=1e-9, atol=1e-6)
        if xs:
            assert a[1] == pytest.approx(np.mean(xs)) and a[3] == min(xs) and a[4] == max(xs)

    def test_dense_groups_shared_ids(self):
        a, b = K.dense_groups(np.array([[1, 2], [3, 4]]), np.array([[3, 4], [5, 6], [1, 2]]))
        assert a[0] == b[2] and a[1] == b[0] and len({*a.tolist(), *b.tolist()}) == 3
        e1, e2 = K.dense_groups(np.empty(0), np.empty(0))
        assert len(e1) == len(e2) == 0

    def test_summary_empty(self):
        assert Summary.of([]).count == 0

    def test_pure_numpy_path_matches(self, tmp_path):
        """Report produced with numba disabled equals the default build's."""
        ev = random_trace(3, 2000)
        from pttrace.trace_io import TraceFileHeader, write_trace

        path = tmp_path / "t.ptrc"
        write_trace(path, TraceFileHeader("s", 1, 0), to_packets(ev))
        code = ("import sys, pttrace._accel as a; from pttrace.trace_io import merge_files; "
                "from pttrace.analysis.report import analyze, render; "
                "assert not a.USE_NUMBA; "
                "sys.stdout.write(render(analyze(merge_files(sys.argv[1:])[1]))[0])")
        env = dict(os.environ, PT_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, "-c", code, str(path)], env=env,
                             capture_output=True, text=True, check=True).stdout
        assert out == render(analyze(ev))[0]
