from __future__ import annotations

import enum

from ..errors import IllegalTransition


class State(enum.Enum):
    UNCONFIGURED = "unconfigured"
    INACTIVE = "inactive"
    ACTIVE = "active"
    FINALIZED = "finalized"


# transition label -> (allowed start states, goal state); None means any non-final state
TRANSITIONS: dict[str, tuple[frozenset[State] | None, State]] = {
    "configure": (frozenset({State.UNCONFIGURED}), State.INACTIVE),
    "activate": (frozenset({State.INACTIVE}), State.ACTIVE),
    "deactivate": (frozenset({State.ACTIVE}), State.INACTIVE),
    "cleanup": (frozenset({State.INACTIVE}), State.UNCONFIGURED),
    "shutdown": (None, State.FINALIZED),
}


def next_state(current: State, label: str) -> State:
    try:
        allowed, goal = TRANSITIONS[label]
    except KeyError:
        raise IllegalTransition(f"unknown transition {label!r}") from None
    if current is State.FINALIZED or (allowed is not None and current not in allowed):
        raise IllegalTransition(f"cannot {label} from {current.value}")
    return goal


class LifecycleStateMachine:
    __slots__ = ("handle", "state")

    def __init__(self, handle: int):
        self.handle = handle
        self.state = State.UNCONFIGURED

    @property
    def is_active(self) -> bool:
        return self.state is State.ACTIVE

    def __repr__(self):
        return f"<LifecycleStateMachine {self.handle} {self.state.value}>"
