"""numba switch.

Set ``PT_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging, or where the JIT is unavailable).  When numba is missing the
numpy path is used silently.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("PT_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
