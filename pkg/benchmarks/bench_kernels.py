"""Compare the numba and numpy variants of the per-cell kernels.

Run ``python benchmarks/bench_kernels.py [--size N] [--repeat R]``. Both
variants are imported directly, so the ``QUENCHLAB_NUMBA`` flag does not
matter here; it only selects which variant the solvers use. A full state solve
is timed as well, under whichever backend the flag selects.
"""

import argparse
import time
import timeit

import numpy as np

from quenchlab import kernels
from quenchlab._backend import backend_name


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernels(size, repeat):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(size, size))
    phi = rng.uniform(-0.999, 0.999, size=(size, size))
    r = rng.uniform(-3.0, 3.0, size=size * size)
    h = 8.0 / size
    cases = {
        "laplacian": (
            lambda: kernels.laplacian_numba(v, h, h),
            lambda: kernels.laplacian_numpy(v, h, h),
        ),
        "log_derivs": (
            lambda: kernels.log_derivs_numba(phi, 0.05),
            lambda: kernels.log_derivs_numpy(phi, 0.05),
        ),
        "penalty_derivs": (
            lambda: kernels.penalty_derivs_numba(2.0 * phi, 1e-4),
            lambda: kernels.penalty_derivs_numpy(2.0 * phi, 1e-4),
        ),
        "prox_log": (
            lambda: kernels.prox_log_numba(r, 0.05, 1e-3),
            lambda: kernels.prox_log_numpy(r, 0.05, 1e-3),
        ),
    }
    rows = []
    for name, (fast, ref) in cases.items():
        fast()  # compile outside the timing
        t_nb = _best(fast, repeat, 20)
        t_np = _best(ref, repeat, 20)
        rows.append((name, t_nb, t_np))
    return rows


def bench_solve(size, nt):
    from quenchlab.grid import Grid, TimeGrid
    from quenchlab.potentials import ConcavePart, LogQuench
    from quenchlab.state import ControlBox, PhysParams, Problem, ProblemData, solve_state

    grid = Grid(size, size, 8.0, 8.0)
    tg = TimeGrid(2.0, nt)
    X, Y = grid.centers
    phi0 = 0.95 * np.tanh(np.sqrt((X - 4.0) ** 2 + (Y - 4.0) ** 2) - 2.0)
    f = np.full((nt + 1,) + grid.shape, 0.002)
    zero = np.zeros(grid.shape)
    prob = Problem(
        grid, tg, PhysParams(gamma=0.01), ProblemData(f, phi0, zero, zero),
        ConcavePart(0.0, 0.15), ControlBox(-1.0, 1.0),
    )
    solve_state(prob, prob.zero_control(), LogQuench(0.05))  # warm-up
    t0 = time.perf_counter()
    solve_state(prob, prob.zero_control(), LogQuench(0.05))
    return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nt", type=int, default=32)
    args = ap.parse_args(argv)
    print(f"kernels on a {args.size}x{args.size} grid (best of {args.repeat})")
    print(f"{'kernel':<16}{'numba [us]':>12}{'numpy [us]':>12}{'speedup':>10}")
    for name, t_nb, t_np in bench_kernels(args.size, args.repeat):
        print(f"{name:<16}{1e6 * t_nb:12.1f}{1e6 * t_np:12.1f}{t_np / t_nb:10.2f}")
    t = bench_solve(32, args.nt)
    print(f"state solve 32x32, nt={args.nt}, backend {backend_name()}: {t:.3f} s")


if __name__ == "__main__":
    main()
