"""``pt trace start|stop|status``: a session shared by later processes.

``start`` writes a control file in the state directory; fixtures started
afterwards (without launcher-provided environment) record into the
session's output directory.  ``stop`` removes the control file and sums
what those processes recorded.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from ..errors import TraceFormatError
from ..recorder import compile_pattern
from ..trace_io import read_packets
from .env import control_path, read_control


def start(session_name: str, events: list[str], output_dir: str) -> dict:
    for e in events:
        compile_pattern(e)
    path = control_path()
    if path.exists():
        raise FileExistsError(f"session {read_control()['session_name']!r} is already active")
    state = {"session_name": session_name, "events": list(events),
             "output_dir": str(Path(output_dir).resolve()), "started_ns": time.time_ns()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state, indent=2) + "\n")
    return state


def session_files(state: dict) -> list[Path]:
    return sorted(Path(state["output_dir"]).glob(f"{state['session_name']}-*.ptrc"))


def tally(state: dict) -> tuple[int, int, int]:
    """(events, dropped, files) over the session's trace files."""
    events = dropped = files = 0
    for f in session_files(state):
        try:
            _, packets = read_packets(f)
        except TraceFormatError:
            continue
        files += 1
        events += sum(p.event_count for p in packets)
        dropped += sum(p.dropped_count for p in packets)
    return events, dropped, files


def stop() -> tuple[dict, tuple[int, int, int]] | None:
    state = read_control()
    if state is None:
        return None
    counts = tally(state)
    control_path().unlink()
    return state, counts


def status() -> dict | None:
    return read_control()
