"""How a node process learns whether and what to trace.

The launcher passes the configuration through environment variables.
Without them, a session opened by ``pt trace start`` (a small JSON
control file in the state directory) applies instead.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .. import recorder

ENV_SESSION = "PT_TRACE_SESSION"
ENV_EVENTS = "PT_TRACE_EVENTS"
ENV_OUTPUT_DIR = "PT_TRACE_OUTPUT_DIR"
ENV_STATE_DIR = "PT_STATE_DIR"
CONTROL_FILE = "session.json"


@dataclass
class TraceSettings:
    session_name: str
    events: list[str] = field(default_factory=lambda: ["pt:*"])
    output_dir: str = "."

    def to_env(self) -> dict[str, str]:
        return {ENV_SESSION: self.session_name, ENV_EVENTS: ",".join(self.events),
                ENV_OUTPUT_DIR: str(self.output_dir)}

    def trace_path(self, pid: int | None = None) -> Path:
        return Path(self.output_dir) / f"{self.session_name}-{pid or os.getpid()}.ptrc"


def state_dir() -> Path:
    return Path(os.environ.get(ENV_STATE_DIR) or Path.home() / ".pt")


def control_path() -> Path:
    return state_dir() / CONTROL_FILE


def read_control() -> dict | None:
    try:
        return json.loads(control_path().read_text())
    except FileNotFoundError:
        return None


def settings_from_env(environ=None) -> TraceSettings | None:
    env = os.environ if environ is None else environ
    name = env.get(ENV_SESSION)
    if name:
        events = [e.strip() for e in env.get(ENV_EVENTS, "").split(",") if e.strip()]
        return TraceSettings(name, events or ["pt:*"], env.get(ENV_OUTPUT_DIR) or ".")
    ctl = read_control()
    if ctl is not None:
        return TraceSettings(ctl["session_name"], list(ctl["events"]), ctl["output_dir"])
    return None


@contextmanager
def traced_process(settings: TraceSettings | None = None, *, environ=None):
    """Record this process for the duration of the block, if configured.

    Enter before building any node so the session brackets every event;
    the session is stopped on the way out whatever happens inside.
    """
    if settings is None:
        settings = settings_from_env(environ)
    if settings is None:
        yield None
        return
    session = recorder.session_start(recorder.SessionConfig(
        settings.session_name, settings.events, recorder.DEFAULT_CAPACITY,
        settings.trace_path()))
    try:
        yield session
    finally:
        recorder.session_stop(session)
