"""Compare the compiled and pure-numpy two-layer Lorenz 96 kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--steps 2000] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for the tendency and for a
block of coupled RK4 steps, and the speedup of the compiled backend.
"""
import argparse
import sys
import timeit

import numpy as np

from nudgefit import l96
from nudgefit.kernels import compiled_backend, python_backend


def _cases(params, steps):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, params.dim)
    y = rng.uniform(-1, 1, params.dim)
    gains = np.zeros(params.dim)
    gains[: params.K] = 50.0
    out = np.empty(params.dim)
    args = (params.d_slow, params.d_fast, params.gamma, float(params.F))

    def tendency(backend):
        return lambda: backend.l96_tendency(x, *args, out)

    def coupled(backend):
        def call():
            a, b = x.copy(), y.copy()
            backend.l96_coupled_rk4(a, b, params.d_slow, params.d_fast, 0.9 * params.d_slow, params.d_fast,
                                    params.gamma, float(params.F), gains, 1e-3, steps)
        return call

    return {"tendency": tendency, f"coupled_rk4 x{steps}": coupled}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if compiled_backend is None:
        print("compiled backend not available; build with `pip install -e . --no-build-isolation`")
        return 1
    params = l96.default_params()
    print(f"{'kernel':<22}{'python [s]':>14}{'cython [s]':>14}{'speedup':>10}")
    for name, make in _cases(params, args.steps).items():
        times = {}
        for label, backend in (("python", python_backend), ("cython", compiled_backend)):
            fn = make(backend)
            number = 1 if name.startswith("coupled") else 2000
            times[label] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
        print(f"{name:<22}{times['python']:>14.3e}{times['cython']:>14.3e}{times['python'] / times['cython']:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
