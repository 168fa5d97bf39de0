"""Small node programs used by launch documents, tests and demos.

Run one as ``python -m pttrace.fixtures NAME [ARGS]``.  Tracing is taken
from the environment (see :mod:`pttrace.orchestration.env`) and wraps the
whole program, so the session starts before the context and the first
node exist and stops even when the program fails.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
import time
from dataclasses import dataclass, field

from .runtime import Context, MultiThreadedExecutor, SingleThreadedExecutor


def busy_wait_ns(ns: int) -> None:
    end = time.monotonic_ns() + ns
    while time.monotonic_ns() < end:
        pass


@dataclass
class SystemSpec:
    """What :func:`build_system` creates, for checking a rebuilt model."""

    nodes: set[str] = field(default_factory=set)
    publishers: dict[str, str] = field(default_factory=dict)       # topic -> node
    subscriptions: dict[str, tuple[str, str]] = field(default_factory=dict)  # symbol -> (node, topic)
    timers: dict[str, int] = field(default_factory=dict)           # symbol -> period_ns


def build_system(ctx: Context, *, sensor_period_ns: int = 20_000_000,
                 fusion_period_ns: int = 50_000_000):
    """Two nodes, three publishers, three subscriptions, two timers.

    ``sensor`` publishes ``scan`` and ``odom`` from one timer and listens
    to ``fused``; ``fusion`` listens to both sensor topics and, on its
    own timer, publishes a result built from the latest of each.
    """
    spec = SystemSpec()
    sensor = ctx.create_node("sensor")
    fusion = ctx.create_node("fusion")
    scan = sensor.create_publisher("scan")
    odom = sensor.create_publisher("odom")
    fused = fusion.create_publisher("fused")
    latest: dict[str, bytes] = {}

    def sensor_tick():
        scan.publish(b"scan")
        odom.publish(b"odom")

    def fusion_tick():
        if latest:
            fused.publish(b"|".join(latest[k] for k in sorted(latest)))

    sensor.create_timer(sensor_period_ns, sensor_tick, symbol="sensor_tick")
    fusion.create_timer(fusion_period_ns, fusion_tick, symbol="fusion_tick")
    fusion.create_subscription("scan", lambda m: latest.__setitem__("scan", m), symbol="on_scan")
    fusion.create_subscription("odom", lambda m: latest.__setitem__("odom", m), symbol="on_odom")
    sensor.create_subscription("fused", lambda m: None, symbol="on_fused")

    spec.nodes = {"sensor", "fusion"}
    spec.publishers = {"scan": "sensor", "odom": "sensor", "fused": "fusion"}
    spec.subscriptions = {"on_scan": ("fusion", "scan"), "on_odom": ("fusion", "odom"),
                          "on_fused": ("sensor", "fused")}
    spec.timers = {"sensor_tick": sensor_period_ns, "fusion_tick": fusion_period_ns}
    return [sensor, fusion], spec


# -- programs -----------------------------------------------------------------

def run_talker(args) -> int:
    ctx = Context()
    node = ctx.create_node(args.name)
    pub = node.create_publisher(args.topic)
    sent = [0]
    done = threading.Event()
    payload = b"x" * args.size

    def tick():
        if sent[0] < args.count:
            pub.publish(payload)
            sent[0] += 1
        if sent[0] >= args.count:
            done.set()

    node.create_timer(max(1, int(1e9 / args.rate)), tick, symbol="talker_tick")
    ex = SingleThreadedExecutor()
    ex.add_node(node)
    ex.spin(stop_event=done, duration_s=args.count / args.rate + 5)
    return 0


def run_listener(args) -> int:
    ctx = Context()
    node = ctx.create_node(args.name)
    got = [0]
    done = threading.Event()

    def on_message(msg):
        got[0] += 1
        if args.count and got[0] >= args.count:
            done.set()

    node.create_subscription(args.topic, on_message, symbol="listener_callback")
    ex = SingleThreadedExecutor()
    ex.add_node(node)
    ex.spin(stop_event=done, duration_s=args.duration)
    return 0


def run_pubsub(args) -> int:
    ctx = Context()
    talker = ctx.create_node("talker")
    listener = ctx.create_node("listener")
    pub = talker.create_publisher("chatter", queue_depth=args.count)
    listener.create_subscription("chatter", lambda m: None, queue_depth=args.count,
                                 symbol="listener_callback")
    for _ in range(args.count):
        pub.publish(b"hello")
    ex = SingleThreadedExecutor()
    ex.add_node(listener)
    ex.spin(work_count=args.count, duration_s=30)
    return 0


def run_timer(args) -> int:
    ctx = Context()
    node = ctx.create_node("timer_node")
    busy = int(args.busy_ms * 1e6)
    node.create_timer(int(args.period_ms * 1e6), lambda: busy_wait_ns(busy), symbol=args.symbol)
    ex = SingleThreadedExecutor()
    ex.add_node(node)
    ex.spin(duration_s=args.duration)
    return 0


def run_lifecycle(args) -> int:
    ctx = Context()
    node = ctx.create_node("managed", lifecycle=True)
    pub = node.create_publisher("status")
    for label in ("configure", "activate"):
        node.transition(label)
    pub.publish(b"up")
    for label in ("deactivate", "cleanup"):
        node.transition(label)
    return 0


def run_system(args) -> int:
    ctx = Context()
    nodes, _ = build_system(ctx)
    ex = MultiThreadedExecutor(num_threads=args.threads)
    for n in nodes:
        ex.add_node(n)
    ex.spin(duration_s=args.duration)
    return 0


def run_crash(args) -> int:
    ctx = Context()
    ctx.create_node(args.name)
    if args.raise_error:
        raise RuntimeError("crash fixture failing on purpose")
    return args.code


FIXTURES = {
    "talker": run_talker,
    "listener": run_listener,
    "pubsub": run_pubsub,
    "timer": run_timer,
    "lifecycle": run_lifecycle,
    "system": run_system,
    "crash": run_crash,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m pttrace.fixtures",
                                description="Run one of the bundled node programs.")
    sub = p.add_subparsers(dest="fixture", required=True)

    t = sub.add_parser("talker")
    t.add_argument("--name", default="talker")
    t.add_argument("--topic", default="chatter")
    t.add_argument("--count", type=int, default=10)
    t.add_argument("--rate", type=float, default=100.0)
    t.add_argument("--size", type=int, default=16)

    ls = sub.add_parser("listener")
    ls.add_argument("--name", default="listener")
    ls.add_argument("--topic", default="chatter")
    ls.add_argument("--count", type=int, default=0, help="stop after this many messages")
    ls.add_argument("--duration", type=float, default=0.5)

    ps = sub.add_parser("pubsub")
    ps.add_argument("--count", type=int, default=100)

    tm = sub.add_parser("timer")
    tm.add_argument("--period-ms", type=float, default=100.0)
    tm.add_argument("--busy-ms", type=float, default=10.0)
    tm.add_argument("--duration", type=float, default=1.0)
    tm.add_argument("--symbol", default="timer_callback")

    sub.add_parser("lifecycle")

    sy = sub.add_parser("system")
    sy.add_argument("--duration", type=float, default=1.0)
    sy.add_argument("--threads", type=int, default=2)

    c = sub.add_parser("crash")
    c.add_argument("--name", default="crasher")
    c.add_argument("--code", type=int, default=3)
    c.add_argument("--raise-error", action="store_true")
    return p


def _terminate(signum, frame):
    # unwind through the tracing context so the session gets flushed
    raise SystemExit(128 + signum)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    from .orchestration.env import traced_process

    signal.signal(signal.SIGTERM, _terminate)
    with traced_process():
        return FIXTURES[args.fixture](args)


if __name__ == "__main__":
    sys.exit(main())
