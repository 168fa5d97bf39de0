"""A small instrumented publish/subscribe runtime."""

from .entities import (Client, Context, Node, Publisher, Service, Subscription,
                       Timer, new_handle)
from .executor import (DEFAULT_WAIT_TIMEOUT_NS, Executor, MultiThreadedExecutor,
                       SingleThreadedExecutor)
from .lifecycle import LifecycleStateMachine, State

__all__ = [
    "Client", "Context", "Node", "Publisher", "Service", "Subscription", "Timer",
    "new_handle", "DEFAULT_WAIT_TIMEOUT_NS", "Executor", "MultiThreadedExecutor",
    "SingleThreadedExecutor", "LifecycleStateMachine", "State",
]
