"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Both backends are imported directly, so FABREG_PURE_PYTHON has no effect
here.  Each row reports the best of R runs.
"""

import argparse
import timeit

import numpy as np

from fabreg import _pycore

try:
    from fabreg import _core
except ImportError:
    _core = None


def cases(size, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.2, 2.0, size)
    return {
        "x": rng.normal(0, 4, size),
        "p": rng.uniform(1e-4, 0.1, size),
        "b": rng.normal(0, 2, size),
        "r": r,
        "mu": rng.normal(0, 1, size),
        "tau2": r ** 2 * 10 ** rng.uniform(-2, 2, size),
        "sw": r * rng.uniform(0.5, 2.0, size),
    }


def mle_inputs(m, seed=1):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0, 4, m)
    z = np.sqrt(lam + 1.0) * rng.standard_normal(m)
    return z / np.sqrt(np.mean(z * z)), lam


def workloads(k, c):
    z, lam = mle_inputs(400)
    return [
        ("t_cdf (scalar loop)", lambda: [k.t_cdf(v, 7.0) for v in c["x"]]),
        ("ppf_batch t(7)", lambda: k.ppf_batch(c["p"], 7.0)),
        ("fab_ginv_batch", lambda: k.fab_ginv_batch(c["x"], 0.05)),
        ("fab_endpoints_batch z", lambda: k.fab_endpoints_batch(
            c["b"], c["r"], c["mu"], c["tau2"], c["sw"], 0.05, 0.0, 1e-9, 200)),
        ("fab_endpoints_batch t(12)", lambda: k.fab_endpoints_batch(
            c["b"], c["r"], c["mu"], c["tau2"], c["sw"], 0.05, 12.0, 1e-9, 200)),
        ("marginal_mle m=400", lambda: k.marginal_mle(z, lam, None, 1e6, 1e-8, 1e6, 1e-7, 500)),
    ]


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2000, help="cases per batch workload")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not built; nothing to compare")
        return 1
    c = cases(args.size)
    print(f"{'workload':28s} {'compiled':>12s} {'python':>12s} {'speedup':>9s}")
    for (name, fast), (_, slow) in zip(workloads(_core, c), workloads(_pycore, c)):
        tc, tp = best(fast, args.repeat), best(slow, args.repeat)
        print(f"{name:28s} {tc * 1e3:10.2f}ms {tp * 1e3:10.2f}ms {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
