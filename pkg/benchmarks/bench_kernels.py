"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Each kernel is
timed on a single-query shape (the common case inside the optimizer) and on
a large batch, followed by an end-to-end population-shift
optimization that swaps the active backend in place.
"""
import argparse
import timeit

import numpy as np

from intervene import _kernels_py, kernels, optimize
from intervene.gain import InterventionConstraints
from intervene.gp import GpHyperparams, condition

try:
    from intervene import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def kernel_cases(rng):
    n, m, d = 400, 400, 10
    A, B = rng.normal(size=(m, d)), rng.normal(size=(n, d))
    L = rng.uniform(0.2, 1.0, d)
    c = rng.normal(size=n)
    S = rng.normal(size=(n, n))
    M = S + S.T
    r = 3
    Q = np.ascontiguousarray(rng.normal(size=(n, r)))
    s0, s0p, wv, bX = (rng.normal(size=n) for _ in range(4))
    Kinv = np.ascontiguousarray(S @ S.T / n + np.eye(n))
    z = rng.normal(size=r)
    a1, q1, c1 = A[:1].copy(), B[:50].copy(), c[:50].copy()
    return {
        "ard_cross 1x50x10": lambda k: k.ard_cross(a1, q1, L, 1.2),
        "ard_cross_grad 1x50x10": lambda k: k.ard_cross_grad(a1, q1, c1, L, 1.2),
        "ard_cross 400x400x10": lambda k: k.ard_cross(A, B, L, 1.2),
        "ard_cross_grad 400x400x10": lambda k: k.ard_cross_grad(A, B, c, L, 1.2),
        "lml_grad_terms 400x10": lambda k: k.lml_grad_terms(B, M),
        "fix_terms n=400 r=3": lambda k: k.fix_terms(z, Q, L[:r], s0, s0p, wv, bX, Kinv, True),
    }


def time_call(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def end_to_end(rng):
    X = rng.uniform(-1, 1, size=(300, 6))
    y = 0.3 * X[:, 0] + 0.7 * X[:, 1] + 0.2 * rng.standard_normal(300)
    model = condition(X, y, GpHyperparams(np.full(6, 2.0), 1.0, 0.04))
    c = InterventionConstraints.box(6, 1.0)
    return lambda: optimize.continuation_maximize(model, X, c, 0.01, restarts=2, seed=0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension unavailable; only the numpy fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for name, fn in kernel_cases(rng).items():
        tp = time_call(lambda: fn(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{name:<28}{tp * 1e3:>14.3f}{'-':>16}{'-':>10}")
            continue
        tc = time_call(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<28}{tp * 1e3:>14.3f}{tc * 1e3:>16.3f}{tp / tc:>10.2f}")

    run = end_to_end(rng)
    active = kernels._impl
    results = {}
    for label, impl in (("python", _kernels_py), ("compiled", _ckernels)):
        if impl is None:
            continue
        kernels._impl = impl
        try:
            results[label] = min(timeit.repeat(run, number=1, repeat=max(1, args.repeat // 2)))
        finally:
            kernels._impl = active
    line = "  ".join(f"{k} {v:.2f}s" for k, v in results.items())
    print(f"\nshift optimization, n=300 d=6: {line}")


if __name__ == "__main__":
    main()
