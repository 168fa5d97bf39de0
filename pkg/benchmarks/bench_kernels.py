"""Compare the compiled and numpy versions of the analysis kernels.

    python benchmarks/bench_kernels.py --n 1000000 --repeat 5
"""

import argparse
import time

import numpy as np

from pttrace.analysis import _kernels as K


def _targets(rng, n, groups):
    g = rng.integers(0, groups, n)
    p = rng.permutation(4 * n)[:n]
    o = np.lexsort((p, g))
    return g[o].astype(np.int64), p[o].astype(np.int64)


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--groups", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    tg, tp = _targets(rng, args.n, args.groups)
    qg = rng.integers(0, args.groups, args.n).astype(np.int64)
    qp = rng.integers(0, 4 * args.n, args.n).astype(np.int64)
    is_start = rng.random(args.n) < 0.5
    x = rng.normal(1e6, 1e4, args.n)

    cases = {
        "first_after": (lambda: K.first_after_np(qg, qp, tg, tp),
                        lambda: K.first_after_jit(qg, qp, tg, tp)),
        "last_before": (lambda: K.last_before_np(qg, qp, tg, tp),
                        lambda: K.last_before_jit(qg, qp, tg, tp)),
        "pair_adjacent": (lambda: K.pair_adjacent_np(is_start, tg),
                          lambda: K.pair_adjacent_jit(is_start, tg)),
        "summarize": (lambda: K.summarize_np(x), lambda: K.summarize_jit(x)),
    }
    print(f"n={args.n} groups={args.groups} best of {args.repeat}")
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (f_np, f_jit) in cases.items():
        a, b = f_np(), f_jit()  # warm up / compile
        if isinstance(a, np.ndarray):
            assert np.array_equal(a, b), name
        t_np, t_jit = _best(f_np, args.repeat), _best(f_jit, args.repeat)
        print(f"{name:<14} {t_np * 1e3:>10.2f} {t_jit * 1e3:>10.2f} {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
