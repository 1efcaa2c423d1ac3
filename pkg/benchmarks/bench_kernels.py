"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 800 1600 3200] [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from ncfv import _kernels_py

try:
    from ncfv import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(n, rng):
    m = int(round(np.sqrt(n)))
    coord = (np.arange(n) // m % m).astype(np.int64)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    out = np.empty_like(a)
    eps = np.sort(rng.standard_normal(n))
    t = 1 + 0.5 * rng.uniform(-0.5, 0.5, 100000)
    mm = 0.5 + rng.uniform(-0.5, 0.5, 100000)
    return {
        "displacement_weight": lambda k: k.displacement_weight(a, coord, m, out),
        "displacement_weight_sq_sum": lambda k: k.displacement_weight_sq_sum(a, coord, m),
        "kubo_denominator": lambda k: k.kubo_denominator(a, eps, 0.1, out),
        "chain_lyapunov": lambda k: k.chain_lyapunov(t, mm, 0.0),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[800, 1600, 3200])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':28s} {'n':>6s} " + " ".join(f"{b:>10s}" for b, _ in backends) + "   speedup")
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
                     for _, mod in backends]
            speed = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else ""
            print(f"{name:28s} {n:6d} " + " ".join(f"{t:10.4f}" for t in times) + "  " + speed)


if __name__ == "__main__":
    main()
