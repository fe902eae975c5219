"""Time the compiled core against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--m 256] [--T 1000000] [--repeat 5]

Both backends are fed identical inputs; the script also checks that the
chain walks agree draw for draw and the dense kernels agree to rounding.
"""
import argparse
import time

import numpy as np

from epmlab import _fallback

try:
    from epmlab import _core
except ImportError:  # pragma: no cover
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=256, help="grid size N (dense N x N kernels)")
    ap.add_argument("--T", type=int, default=1_000_000, help="chain length")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not built; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    N = args.m
    logA = -rng.random((N, N)) * 30
    shift = rng.standard_normal(N)
    K = rng.dirichlet(np.ones(N), size=N)
    g = rng.standard_normal(N)
    prob, alias = _fallback.alias_build(K)
    p0, a0 = _fallback.alias_build(np.full((1, N), 1.0 / N))
    u = rng.random((args.T + 1, 2))

    cases = [
        ("row_logsumexp", lambda: _core.row_logsumexp(logA, shift, args.threads),
         lambda: _fallback.row_logsumexp(logA, shift), args.repeat),
        ("matvec", lambda: _core.matvec(K, g, args.threads), lambda: _fallback.matvec(K, g), args.repeat),
        ("rmatvec", lambda: _core.rmatvec(K, g, args.threads), lambda: _fallback.rmatvec(K, g), args.repeat),
        ("alias_build", lambda: _core.alias_build(K), lambda: _fallback.alias_build(K), 1),
        (f"alias_walk T={args.T}", lambda: _core.alias_walk(prob, alias, p0[0], a0[0], u),
         lambda: _fallback.alias_walk(prob, alias, p0[0], a0[0], u), 1),
    ]
    print(f"{'kernel':<24}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}  agree")
    for name, fc, fp, rep in cases:
        tc, oc = best_of(fc, rep)
        tp, op = best_of(fp, rep)
        if isinstance(oc, tuple):
            agree = all(np.array_equal(a, b) for a, b in zip(oc, op))
        elif oc.dtype.kind == "i":
            agree = np.array_equal(oc, op)
        else:
            agree = np.allclose(oc, op, rtol=1e-13)
        print(f"{name:<24}{tc:>14.5f}{tp:>14.5f}{tp / tc:>10.1f}  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
