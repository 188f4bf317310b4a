"""Benchmark problems shared by the acceptance suite, tests and examples.

Both benchmarks use a circular interface with ``φ₀ = 0.95 tanh(d - lx/4)``
(``d`` the distance to the domain center) and a weak positive source that
pushes the mean toward the pure phase ``φ = 1``, so the constraint binds as
``α`` decreases. ``configs/benchmark.json`` and ``configs/control.json``
describe the same problems for the CLI.
"""

import numpy as np

from .adjoint import CostSpec
from .grid import Grid, TimeGrid
from .potentials import ConcavePart
from .state import ControlBox, PhysParams, Problem, ProblemData

PHYS = PhysParams(gamma=0.01, a=0.5, b=0.5, kappa1=1.0, kappa2=1.0, lam=1.0)
CONCAVE = ConcavePart(c1=0.0, c2=0.15)
SOURCE = 0.002
LENGTH = 8.0
SCHEDULE = (0.1, 0.05, 0.025, 0.0125)
#: quench depth of the single-α control runs (gradient check, optimize)
CONTROL_ALPHA = 0.05


def interface_problem(nx, nt, t_final, params=PHYS, box=(-1.0, 1.0), source=SOURCE):
    grid = Grid(nx, nx, LENGTH, LENGTH)
    tg = TimeGrid(t_final, nt)
    X, Y = grid.centers
    d = np.sqrt((X - LENGTH / 2) ** 2 + (Y - LENGTH / 2) ** 2)
    phi0 = 0.95 * np.tanh(d - LENGTH / 4)
    f = np.full((nt + 1,) + grid.shape, float(source))
    zero = np.zeros(grid.shape)
    return Problem(grid, tg, params, ProblemData(f, phi0, zero, zero), CONCAVE, ControlBox(*box))


def state_benchmark(nx=64, nt=200, t_final=20.0):
    """Deep-quench state benchmark (``u = 0``)."""
    return interface_problem(nx, nt, t_final)


def control_benchmark(nx=32, nt=64, t_final=2.0):
    """Control benchmark: problem, cost and the reference control."""
    prob = interface_problem(nx, nt, t_final)
    cost = CostSpec(
        beta1=1.0,
        beta2=1.0,
        beta3=1.0,
        beta4=1.0,
        beta5=1.0,
        beta6=1.0,
        nu=0.1,
        phi_Q=0.0,
        w_Q=0.2,
        wprime_Q=0.0,
        phi_Omega=0.3,
        w_Omega=0.5,
        wprime_Omega=0.0,
    )
    X, _ = prob.grid.centers
    u = np.broadcast_to(0.3 * np.cos(np.pi * X / LENGTH), prob.control_shape).copy()
    return prob, cost, u
