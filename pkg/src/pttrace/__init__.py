"""Low-overhead tracing for a layered publish/subscribe runtime."""

__version__ = "0.1.0"
