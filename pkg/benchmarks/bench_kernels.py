"""Time the numba-compiled loop kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Both paths are imported from the same module, so the comparison does not
depend on HYPERDYNE_DISABLE_NUMBA.  Compilation is excluded (one warm-up call).
"""

import argparse
import json
import math
import timeit

import numpy as np

from hyperdyne import kernels
from hyperdyne._jit import HAVE_NUMBA
from hyperdyne.constants import DIPOLAR_PREFACTOR, GAMMA_1H
from hyperdyne.physics import NVSensor


def _field_case(n=20000, n_img=1):
    rng = np.random.default_rng(0)
    nv = NVSensor(6.2e-9)
    e1, e2, ax = nv.frame()
    pos = np.column_stack([rng.uniform(-25e-9, 25e-9, (n, 2)), rng.uniform(0, 37e-9, n)])
    return (pos, nv.position, e1, e2, ax, rng.uniform(0, 2 * math.pi, n), rng.integers(0, 3, n).astype(np.int64),
            np.array([0.0, 0.3, -1.1]), 50e-9, 50e-9, n_img, DIPOLAR_PREFACTOR * GAMMA_1H)


def _ar1_case(n=1_000_000):
    return (0.3, 0.99, np.random.default_rng(1).standard_normal(n))


def _loglik_case(n=4096, mode=0):
    rng = np.random.default_rng(2)
    t = np.arange(n) * 7.5e-6
    return (0.3, 2 * math.pi * 2000.0, 0.7, t, rng.poisson(30.0, n).astype(float), 0.025, 0.015, 1000.0, mode)


CASES = {
    "field_sums (20k spins, 1 image shell)": (kernels.field_sums_loop, kernels.field_sums_numpy, _field_case),
    "ar1 (1e6 steps)": (kernels.ar1_loop, kernels.ar1_numpy, _ar1_case),
    "loglik_grad (4096 slots, poisson)": (kernels.loglik_grad_loop, kernels.loglik_grad_numpy, _loglik_case),
}


def best_time(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", default=None, help="also write results to this file")
    args = p.parse_args(argv)
    rows = []
    for name, (loop, vec, make) in CASES.items():
        a = make()
        t_np = best_time(vec, a, args.repeat)
        t_nb = best_time(loop, a, args.repeat) if HAVE_NUMBA else math.nan
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
    print(f"{'kernel':40s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:40s} {1e3 * r['numba_s']:11.3f} {1e3 * r['numpy_s']:11.3f} {r['speedup']:8.1f}x")
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path was timed")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return rows


if __name__ == "__main__":
    main()
