"""Launching traced systems and controlling sessions from the CLI."""

from .env import TraceSettings, settings_from_env, traced_process
from .launch import (LaunchDocument, LaunchReport, NodeEntry, ProcessResult, launch,
                     load_launch, parse_launch)

__all__ = [
    "TraceSettings", "settings_from_env", "traced_process", "LaunchDocument",
    "LaunchReport", "NodeEntry", "ProcessResult", "launch", "load_launch", "parse_launch",
]
