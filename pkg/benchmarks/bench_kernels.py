"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 20] [--sizes 50,200,1000]
Prints one line per (kernel, size) with the median time of each backend and the speedup.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from edgevtp import kernels
from edgevtp.curve_head import bernstein_basis


def _median_seconds(fn, repeat: int) -> float:
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--sizes", default="50,200,1000")
    parser.add_argument("--radius", type=float, default=20.0)
    parser.add_argument("--k", type=int, default=16)
    args = parser.parse_args(argv)
    if kernels.compiled is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'N':>6}{'compiled_ms':>14}{'python_ms':>12}{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        side = 10.0 * np.sqrt(n)
        pos = rng.uniform(0, side, size=(n, 2))
        ctrl = rng.normal(size=(n, 5, 2))
        basis = bernstein_basis(25)
        cases = {
            "knn_radius": lambda impl: kernels.knn_radius(pos, args.radius, args.k, impl=impl),
            "bezier_eval": lambda impl: kernels.bezier_eval(basis, ctrl, impl=impl),
        }
        for name, call in cases.items():
            py = _median_seconds(lambda: call("python"), args.repeat) * 1e3
            if kernels.compiled is not None:
                cy = _median_seconds(lambda: call("compiled"), args.repeat) * 1e3
                print(f"{name:<12}{n:>6}{cy:>14.4f}{py:>12.4f}{py / cy:>10.1f}")
            else:
                print(f"{name:<12}{n:>6}{'-':>14}{py:>12.4f}{'-':>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
