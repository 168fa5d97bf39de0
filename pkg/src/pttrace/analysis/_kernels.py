"""Numeric kernels behind the trace analyses.

Every kernel exists twice: a compiled loop (``*_jit``) and a vectorized
numpy version (``*_np``).  The module-level name picks one according to
:data:`pttrace._accel.USE_NUMBA`.  Both must return identical results.

Conventions: ``group`` arrays are dense non-negative int64 ids, ``pos``
arrays are int64 positions in the merged event stream, and target arrays
are sorted by ``(group, pos)``.
"""

from __future__ import annotations

import numpy as np

from .._accel import USE_NUMBA, njit


def _combined(group: np.ndarray, pos: np.ndarray, width: int) -> np.ndarray:
    return group.astype(np.int64) * width + pos.astype(np.int64)


# -- first target after each query --------------------------------------------

def first_after_np(q_group, q_pos, t_group, t_pos):
    """Index of the first target with the query's group and ``pos > q_pos``, else -1."""
    if len(t_group) == 0 or len(q_group) == 0:
        return np.full(len(q_group), -1, dtype=np.int64)
    width = int(max(t_pos.max(), q_pos.max())) + 2
    keys = _combined(t_group, t_pos, width)
    j = np.searchsorted(keys, _combined(q_group, q_pos, width), side="right")
    jc = np.minimum(j, len(keys) - 1)
    ok = (j < len(keys)) & (t_group[jc] == q_group)
    return np.where(ok, j, -1).astype(np.int64)


@njit
def first_after_jit(q_group, q_pos, t_group, t_pos):
    n = len(t_group)
    out = np.empty(len(q_group), dtype=np.int64)
    for i in range(len(q_group)):
        g = q_group[i]
        p = q_pos[i]
        lo, hi = 0, n
        # first index whose (group, pos) > (g, p)
        while lo < hi:
            mid = (lo + hi) // 2
            if t_group[mid] < g or (t_group[mid] == g and t_pos[mid] <= p):
                lo = mid + 1
            else:
                hi = mid
        if lo < n and t_group[lo] == g:
            out[i] = lo
        else:
            out[i] = -1
    return out


# -- last target before each query --------------------------------------------

def last_before_np(q_group, q_pos, t_group, t_pos):
    """Index of the last target with the query's group and ``pos < q_pos``, else -1."""
    if len(t_group) == 0 or len(q_group) == 0:
        return np.full(len(q_group), -1, dtype=np.int64)
    width = int(max(t_pos.max(), q_pos.max())) + 2
    keys = _combined(t_group, t_pos, width)
    j = np.searchsorted(keys, _combined(q_group, q_pos, width), side="left") - 1
    jc = np.maximum(j, 0)
    ok = (j >= 0) & (t_group[jc] == q_group)
    return np.where(ok, j, -1).astype(np.int64)


@njit
def last_before_jit(q_group, q_pos, t_group, t_pos):
    n = len(t_group)
    out = np.empty(len(q_group), dtype=np.int64)
    for i in range(len(q_group)):
        g = q_group[i]
        p = q_pos[i]
        lo, hi = 0, n
        # first index whose (group, pos) >= (g, p)
        while lo < hi:
            mid = (lo + hi) // 2
            if t_group[mid] < g or (t_group[mid] == g and t_pos[mid] < p):
                lo = mid + 1
            else:
                hi = mid
        j = lo - 1
        if j >= 0 and t_group[j] == g:
            out[i] = j
        else:
            out[i] = -1
    return out


# -- start/end pairing --------------------------------------------------------

def pair_adjacent_np(is_start, group):
    """In a (group, pos)-sorted start/end sequence, pair each start with an
    immediately following end of the same group.  Returns left indices."""
    if len(group) < 2:
        return np.empty(0, dtype=np.int64)
    ok = is_start[:-1] & ~is_start[1:] & (group[:-1] == group[1:])
    return np.flatnonzero(ok).astype(np.int64)


@njit
def pair_adjacent_jit(is_start, group):
    n = len(group)
    out = np.empty(max(n - 1, 0), dtype=np.int64)
    k = 0
    for i in range(n - 1):
        if is_start[i] and not is_start[i + 1] and group[i] == group[i + 1]:
            out[k] = i
            k += 1
    return out[:k]


# -- summaries ----------------------------------------------------------------

def summarize_np(x):
    """(count, mean, sample std, min, max); zeros for empty input."""
    n = len(x)
    if n == 0:
        return 0, 0.0, 0.0, 0.0, 0.0
    xf = np.asarray(x, dtype=np.float64)
    std = float(np.std(xf, ddof=1)) if n > 1 else 0.0
    return n, float(xf.mean()), std, float(xf.min()), float(xf.max())


@njit
def _summarize_jit(x):
    n = len(x)
    if n == 0:
        return 0, 0.0, 0.0, 0.0, 0.0
    mean = 0.0
    lo = x[0]
    hi = x[0]
    for v in x:
        mean += v
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    mean /= n
    ss = 0.0
    for v in x:
        ss += (v - mean) * (v - mean)
    std = np.sqrt(ss / (n - 1)) if n > 1 else 0.0
    return n, mean, std, lo, hi


def summarize_jit(x):
    n, mean, std, lo, hi = _summarize_jit(np.asarray(x, dtype=np.float64))
    return int(n), float(mean), float(std), float(lo), float(hi)


if USE_NUMBA:
    first_after = first_after_jit
    last_before = last_before_jit
    pair_adjacent = pair_adjacent_jit
    summarize = summarize_jit
else:
    first_after = first_after_np
    last_before = last_before_np
    pair_adjacent = pair_adjacent_np
    summarize = summarize_np


def dense_groups(*columns: np.ndarray) -> list[np.ndarray]:
    """Map key rows from several arrays onto one shared set of dense ids.

    Each argument is an ``(n_i, k)`` array of key rows (or a 1-D array
    for single-column keys); equal rows get equal ids across arguments.
    """
    sizes = [len(c) for c in columns]
    if sum(sizes) == 0:
        return [np.empty(0, dtype=np.int64) for _ in columns]
    rows = [np.asarray(c, dtype=np.uint64) for c in columns]
    allrows = np.concatenate([r.reshape(-1, 1) if r.ndim == 1 else r for r in rows])
    _, inverse = np.unique(allrows, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    out, start = [], 0
    for n in sizes:
        out.append(inverse[start:start + n])
        start += n
    return out


def sort_by_group(group: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Permutation that sorts by (group, pos)."""
    return np.lexsort((pos, group))
