"""Offline analysis: model reconstruction and runtime metrics."""

from .metrics import (CallbackInstance, CallbackPairing, IOLink, LatencyResult,
                      LatencySample, Summary, TimerStats, callback_instances,
                      io_linkage, message_latencies, timer_stats)
from .model import SystemModel, build_model, unresolved_handles
from .report import analyze, write_report

__all__ = [
    "CallbackInstance", "CallbackPairing", "IOLink", "LatencyResult", "LatencySample",
    "Summary", "TimerStats", "callback_instances", "io_linkage", "message_latencies",
    "timer_stats", "SystemModel", "build_model", "unresolved_handles", "analyze",
    "write_report",
]
