"""Runtime metrics computed from a time-merged event list.

Positions (indices into the merged list) define "before" and "after";
timestamps only feed the reported durations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import UnknownTimer
from ..trace_model import TracepointId as TP
from ..trace_model import TraceEvent
from . import _kernels as K
from .model import SystemModel, TimerInfo


@dataclass(frozen=True)
class CallbackInstance:
    callback: int
    start_ns: int
    end_ns: int
    thread_id: int
    start_index: int
    end_index: int

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass
class CallbackPairing:
    instances: list[CallbackInstance]
    unmatched_starts: list[int] = field(default_factory=list)  # event indices
    unmatched_ends: list[int] = field(default_factory=list)

    @property
    def diagnostics(self) -> list[str]:
        return ([f"callback_start at index {i} has no matching callback_end"
                 for i in self.unmatched_starts]
                + [f"callback_end at index {i} has no matching callback_start"
                   for i in self.unmatched_ends])


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    std: float
    min: float
    max: float

    @classmethod
    def of(cls, values) -> "Summary":
        return cls(*K.summarize(np.asarray(values, dtype=np.float64)))

    def as_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std,
                "min": self.min, "max": self.max}


@dataclass
class TimerStats:
    timer: int
    instances: list[CallbackInstance]
    intervals_ns: list[int]
    durations_ns: list[int]
    interval_summary: Summary
    duration_summary: Summary


@dataclass(frozen=True)
class LatencySample:
    publisher: int
    subscription: int
    message: int
    publish_ns: int
    callback_start_ns: int

    @property
    def latency_ns(self) -> int:
        return self.callback_start_ns - self.publish_ns


@dataclass
class LatencyResult:
    samples: list[LatencySample]
    diagnostics: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class IOLink:
    start_ns: int
    end_ns: int
    inputs: dict[str, int]           # topic -> message handle
    input_ages_ns: dict[str, int]    # topic -> start_ns minus delivery time
    output: int | None


class _Columns:
    """Lazy columnar view of an event list, one entry per tracepoint kind."""

    def __init__(self, events: Sequence[TraceEvent]):
        self.events = events
        self.tp = np.fromiter((e.tracepoint for e in events), dtype=np.int16, count=len(events))
        self._cache: dict[TP, np.ndarray] = {}

    def positions(self, tp: TP) -> np.ndarray:
        pos = self._cache.get(tp)
        if pos is None:
            pos = self._cache[tp] = np.flatnonzero(self.tp == int(tp)).astype(np.int64)
        return pos

    def field(self, pos: np.ndarray, i: int) -> np.ndarray:
        ev = self.events
        return np.fromiter((ev[p].payload[i] for p in pos), dtype=np.uint64, count=len(pos))

    def tids(self, pos: np.ndarray) -> np.ndarray:
        ev = self.events
        return np.fromiter((ev[p].thread_id for p in pos), dtype=np.uint64, count=len(pos))

    def ts(self, pos) -> list[int]:
        ev = self.events
        return [ev[p].timestamp_ns for p in pos]


def _keys(*cols: np.ndarray) -> np.ndarray:
    return np.stack(cols, axis=1) if cols[0].size else np.empty((0, len(cols)), dtype=np.uint64)


def _sorted_targets(group: np.ndarray, pos: np.ndarray):
    order = K.sort_by_group(group, pos)
    return order, np.ascontiguousarray(group[order]), np.ascontiguousarray(pos[order])


# -- callbacks ----------------------------------------------------------------

def callback_instances(model: SystemModel | None, events: Sequence[TraceEvent],
                       _cols: _Columns | None = None) -> CallbackPairing:
    """Pair each callback_start with the next callback_end of the same
    callback on the same thread, unless another start of that callback
    on that thread comes first.
    """
    cols = _cols or _Columns(events)
    s_pos = cols.positions(TP.callback_start)
    e_pos = cols.positions(TP.callback_end)
    s_grp, e_grp = K.dense_groups(_keys(cols.tids(s_pos), cols.field(s_pos, 0)),
                                  _keys(cols.tids(e_pos), cols.field(e_pos, 0)))
    pos = np.concatenate([s_pos, e_pos])
    grp = np.concatenate([s_grp, e_grp])
    is_start = np.concatenate([np.ones(len(s_pos), bool), np.zeros(len(e_pos), bool)])
    order = K.sort_by_group(grp, pos)
    pos, grp, is_start = pos[order], grp[order], is_start[order]
    left = K.pair_adjacent(np.ascontiguousarray(is_start), np.ascontiguousarray(grp))

    matched = np.zeros(len(pos), dtype=bool)
    matched[left] = True
    matched[left + 1] = True
    starts = pos[left]
    ends = pos[left + 1]
    sort = np.argsort(starts, kind="stable")
    ev = events
    instances = [
        CallbackInstance(ev[s].payload[0], ev[s].timestamp_ns, ev[e].timestamp_ns,
                         ev[s].thread_id, int(s), int(e))
        for s, e in zip(starts[sort].tolist(), ends[sort].tolist())
    ]
    unmatched_starts = sorted(pos[~matched & is_start].tolist())
    unmatched_ends = sorted(pos[~matched & ~is_start].tolist())
    return CallbackPairing(instances, unmatched_starts, unmatched_ends)


def _resolve_timer(model: SystemModel, timer) -> TimerInfo:
    if isinstance(timer, TimerInfo):
        timer = timer.handle
    info = model.timers.get(timer)
    if info is None:
        raise UnknownTimer(f"timer {timer!r} is not in the model")
    return info


def timer_stats(model: SystemModel, events: Sequence[TraceEvent], timer,
                pairing: CallbackPairing | None = None) -> TimerStats:
    info = _resolve_timer(model, timer)
    pairing = pairing or callback_instances(model, events)
    inst = [i for i in pairing.instances if i.callback == info.callback]
    starts = [i.start_ns for i in inst]
    intervals = [b - a for a, b in zip(starts, starts[1:])]
    durations = [i.duration_ns for i in inst]
    return TimerStats(info.handle, inst, intervals, durations,
                      Summary.of(intervals), Summary.of(durations))


# -- end-to-end latency --------------------------------------------------------

def message_latencies(model: SystemModel, events: Sequence[TraceEvent],
                      _cols: _Columns | None = None) -> LatencyResult:
    """api_publish -> callback_start latency, one sample per delivery."""
    cols = _cols or _Columns(events)
    diagnostics: list[str] = []
    samples: list[LatencySample] = []

    p_pos = cols.positions(TP.api_publish)
    if len(p_pos) == 0:
        return LatencyResult(samples, diagnostics)
    p_msg = cols.field(p_pos, 0)
    c_pos = cols.positions(TP.core_publish)
    c_pub = cols.field(c_pos, 0)

    # bind each publish to the same-thread core_publish of the same message
    pg, cg = K.dense_groups(_keys(cols.tids(p_pos), p_msg),
                            _keys(cols.tids(c_pos), cols.field(c_pos, 1)))
    c_order, cg_s, cpos_s = _sorted_targets(cg, c_pos)
    j = K.first_after(pg, p_pos, cg_s, cpos_s)

    q_pub_idx, q_sub, q_msg, q_pos = [], [], [], []
    subs_by_topic: dict[str, list] = {}
    for s in model.subscriptions.values():
        if s.topic is not None:
            subs_by_topic.setdefault(s.topic, []).append(s)
    for i, jj in enumerate(j.tolist()):
        pos_i = int(p_pos[i])
        if jj < 0:
            diagnostics.append(f"publish at index {pos_i}: no core_publish binds a publisher")
            continue
        pub_handle = int(c_pub[c_order[jj]])
        pub = model.publishers.get(pub_handle)
        if pub is None or pub.topic is None:
            diagnostics.append(f"publish at index {pos_i}: unknown publisher {pub_handle}")
            continue
        subs = subs_by_topic.get(pub.topic, [])
        if not subs:
            diagnostics.append(f"publish at index {pos_i}: no subscriber on {pub.topic!r}")
            continue
        for s in subs:
            q_pub_idx.append((i, pub_handle))
            q_sub.append(s.handle)
            q_msg.append(int(p_msg[i]))
            q_pos.append(pos_i)

    if not q_sub:
        return LatencyResult(samples, diagnostics)

    # earliest subsequent transport_take of that message by that subscription
    t_pos = cols.positions(TP.transport_take)
    q_sub_a = np.array(q_sub, dtype=np.uint64)
    q_msg_a = np.array(q_msg, dtype=np.uint64)
    q_pos_a = np.array(q_pos, dtype=np.int64)
    qg, tg = K.dense_groups(_keys(q_sub_a, q_msg_a),
                            _keys(cols.field(t_pos, 0), cols.field(t_pos, 1)))
    t_order, tg_s, tpos_s = _sorted_targets(tg, t_pos)
    k = K.first_after(qg, q_pos_a, tg_s, tpos_s)

    # then the first callback_start of the subscription's callback on the take's thread
    hit = np.flatnonzero(k >= 0)
    take_pos = t_pos[t_order[k[hit]]] if hit.size else np.empty(0, dtype=np.int64)
    cb_of = np.array([model.subscriptions[int(q_sub[h])].callback or 0 for h in hit.tolist()],
                     dtype=np.uint64)
    s_pos = cols.positions(TP.callback_start)
    hg, sg = K.dense_groups(_keys(cols.tids(take_pos), cb_of),
                            _keys(cols.tids(s_pos), cols.field(s_pos, 0)))
    s_order, sg_s, spos_s = _sorted_targets(sg, s_pos)
    m = K.first_after(hg, take_pos, sg_s, spos_s)

    found = dict(zip(hit.tolist(), m.tolist()))
    ev = events
    for q in range(len(q_sub)):
        (i, pub_handle), sub_handle, msg = q_pub_idx[q], q_sub[q], q_msg[q]
        mm = found.get(q)
        if mm is None:
            diagnostics.append(f"message {msg} from publisher {pub_handle} "
                               f"never taken by subscription {sub_handle}")
            continue
        if mm < 0 or model.subscriptions[sub_handle].callback is None:
            diagnostics.append(f"message {msg} taken by subscription {sub_handle} "
                               "but no callback_start follows")
            continue
        cs = int(s_pos[s_order[mm]])
        samples.append(LatencySample(pub_handle, sub_handle, msg,
                                     ev[int(p_pos[i])].timestamp_ns, ev[cs].timestamp_ns))
    return LatencyResult(samples, diagnostics)


# -- input/output linkage -------------------------------------------------------

def io_linkage(model: SystemModel, events: Sequence[TraceEvent], timer,
               pairing: CallbackPairing | None = None) -> list[IOLink]:
    """For each firing of ``timer``: the latest message delivered on each
    of its node's subscriptions before the firing started, and the first
    message the firing published on its own thread.
    """
    info = _resolve_timer(model, timer)
    cols = _Columns(events)
    pairing = pairing or callback_instances(model, events, cols)
    firings = [i for i in pairing.instances if i.callback == info.callback]
    subs = [s for s in model.subscriptions.values()
            if s.node == info.node and s.callback is not None and s.topic is not None]
    if not firings:
        return []
    ev = events

    # deliveries: callback_start of a subscription callback, with the message
    # from the last transport_take by that subscription on the same thread
    topic_ids = {t: n for n, t in enumerate(sorted({s.topic for s in subs}))}
    cb_sub = {s.callback: s for s in subs}
    s_pos = cols.positions(TP.callback_start)
    d_pos = np.array([p for p in s_pos.tolist() if ev[p].payload[0] in cb_sub], dtype=np.int64)
    d_sub = np.array([cb_sub[ev[p].payload[0]].handle for p in d_pos.tolist()], dtype=np.uint64)
    t_pos = cols.positions(TP.transport_take)
    dg, tg = K.dense_groups(_keys(cols.tids(d_pos), d_sub),
                            _keys(cols.tids(t_pos), cols.field(t_pos, 0)))
    t_order, tg_s, tpos_s = _sorted_targets(tg, t_pos)
    tk = K.last_before(dg, d_pos, tg_s, tpos_s)
    keep = tk >= 0
    d_pos = d_pos[keep]
    d_msg = [ev[int(t_pos[t_order[x]])].payload[1] for x in tk[keep].tolist()]
    d_topic = np.array([topic_ids[cb_sub[ev[p].payload[0]].topic] for p in d_pos.tolist()],
                       dtype=np.int64)
    d_order, dgrp_s, dpos_s = _sorted_targets(d_topic, d_pos)

    f_start = np.array([f.start_index for f in firings], dtype=np.int64)
    latest = {}
    for topic, tid in topic_ids.items():
        latest[topic] = K.last_before(np.full(len(firings), tid, dtype=np.int64), f_start,
                                      dgrp_s, dpos_s)

    # outputs: first api_publish on the firing's thread after it starts
    a_pos = cols.positions(TP.api_publish)
    fg, ag = K.dense_groups(np.array([f.thread_id for f in firings], dtype=np.uint64),
                            cols.tids(a_pos))
    a_order, ag_s, apos_s = _sorted_targets(ag, a_pos)
    out = K.first_after(fg, f_start, ag_s, apos_s)

    links = []
    for n, f in enumerate(firings):
        inputs, ages = {}, {}
        for topic in topic_ids:
            x = int(latest[topic][n])
            if x >= 0:
                d = int(d_order[x])
                inputs[topic] = d_msg[d]
                ages[topic] = f.start_ns - ev[int(d_pos[d])].timestamp_ns
        output = None
        o = int(out[n])
        if o >= 0:
            p = int(a_pos[a_order[o]])
            if p < f.end_index:
                output = ev[p].payload[0]
        links.append(IOLink(f.start_ns, f.end_ns, inputs, ages, output))
    return links
