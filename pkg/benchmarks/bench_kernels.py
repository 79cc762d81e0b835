"""Compiled versus pure-Python kernels.

Times the counter-based uniform generator, the tridiagonal solver and the
two end-to-end routines built on them (Brownian simulation and a
finite-difference sweep) under each available backend, and reports the
largest absolute difference between the two backends' outputs. The
uniforms are bitwise equal; the tridiagonal paths (LAPACK banded versus a
Thomas sweep) agree to round-off.

    python benchmarks/bench_kernels.py --paths 100000 --steps 64 --repeat 3
"""
import argparse
import contextlib
import json
import time

import numpy as np

from quadbsde import kernels
from quadbsde.model import TimeGrid
from quadbsde.pde import PdeGrid, PdeProblem, fd_solve
from quadbsde.sde import simulate_brownian


@contextlib.contextmanager
def backend(module):
    saved = kernels._impl
    kernels._impl = module
    try:
        yield
    finally:
        kernels._impl = saved


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def cases(args):
    rng = np.random.default_rng(0)
    n = args.nodes
    lower, upper = -rng.uniform(0.1, 1.0, n), -rng.uniform(0.1, 1.0, n)
    diag = 2.5 + rng.uniform(0.0, 1.0, n)
    rhs = rng.normal(size=n)
    grid = TimeGrid(1.0, args.steps)
    pde_grid = PdeGrid(-6.0, 6.0, 201, 1024)
    problem = PdeProblem.quadratic_gradient()
    return {
        "philox_uniforms": lambda: kernels.philox_uniforms(args.seed, 0, args.paths, args.steps, 1),
        "tridiag_solve": lambda: kernels.tridiag_solve(lower, diag, upper, rhs),
        "simulate_brownian": lambda: simulate_brownian(grid, args.paths, 1, seed=args.seed).increments,
        "fd_solve": lambda: fd_solve(problem, pde_grid).u,
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=100_000)
    parser.add_argument("--steps", type=int, default=64)
    parser.add_argument("--nodes", type=int, default=100_000, help="size of the tridiagonal system")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="optional path for the timings as JSON")
    args = parser.parse_args(argv)

    mods = kernels.backends()
    results = {}
    outputs = {}
    for name, mod in mods.items():
        with backend(mod):
            for case, fn in cases(args).items():
                t, out = best_of(fn, args.repeat)
                results.setdefault(case, {})[name] = t
                outputs.setdefault(case, {})[name] = out

    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in mods) + f"{'speedup':>10}{'max |diff|':>12}")
    for case, row in results.items():
        line = f"{case:<20}" + "".join(f"{row[n]:>11.4f}s" for n in mods)
        if "cython" in row:
            diff = np.max(np.abs(outputs[case]["python"] - outputs[case]["cython"]))
            line += f"{row['python'] / row['cython']:>9.1f}x{diff:>12.1e}"
        print(line)
    if "cython" not in mods:
        print("compiled extension not built; only the pure-Python backend was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"args": vars(args), "seconds": results}, fh, indent=2)


if __name__ == "__main__":
    main()
