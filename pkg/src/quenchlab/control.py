"""Cost evaluation, reduced gradients and projected-gradient optimization.

Controls are time-indexed fields ``u[n]`` on the state time grid. The
L²(Q) inner product is the trapezoid rule in time times cell areas, so the
reduced gradient ``r + ν u`` is a gradient with respect to that inner product.
``u[n]`` acts on the implicit step over ``(t_{n-1}, t_n]``, so its adjoint
part is the ``r`` of the matching reverse step (see :func:`effective_r`); the
control at ``t_0`` never enters the dynamics and gets no adjoint part.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import solve_adjoint
from .state import solve_state

log = logging.getLogger(__name__)


class MissingAnchor(ValueError):
    pass


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------


def q_inner(problem, a, b):
    """L²(Q) inner product of two time-indexed fields."""
    per_step = np.sum(np.asarray(a) * np.asarray(b), axis=(1, 2)) * problem.grid.cell_area
    return float(np.dot(problem.timegrid.weights, per_step))


def q_norm(problem, a):
    return math.sqrt(max(q_inner(problem, a, a), 0.0))


def _omega_sq(problem, a):
    return float(np.sum(np.asarray(a) ** 2) * problem.grid.cell_area)


# --------------------------------------------------------------------------
# cost
# --------------------------------------------------------------------------


def eval_cost(state, u, cost):
    """Seven-term tracking cost with ``∂_t w`` taken as the trajectory's ``v``."""
    prob = state.problem
    u = np.broadcast_to(np.asarray(u, dtype=float), prob.control_shape)
    t = cost.resolved(prob)
    dphi = state.phi - t["phi_Q"]
    dw = state.w - t["w_Q"]
    dv = state.v - t["wprime_Q"]
    return 0.5 * (
        cost.beta1 * q_inner(prob, dphi, dphi)
        + cost.beta2 * _omega_sq(prob, state.phi[-1] - t["phi_Omega"])
        + cost.beta3 * q_inner(prob, dw, dw)
        + cost.beta4 * _omega_sq(prob, state.w[-1] - t["w_Omega"])
        + cost.beta5 * q_inner(prob, dv, dv)
        + cost.beta6 * _omega_sq(prob, state.v[-1] - t["wprime_Omega"])
        + cost.nu * q_inner(prob, u, u)
    )


def eval_adapted_cost(state, u, cost, anchor):
    """``eval_cost`` plus ``½‖u - anchor‖²`` in L²(Q)."""
    if anchor is None:
        raise MissingAnchor("the adapted cost needs an anchor control")
    diff = np.asarray(u, dtype=float) - np.asarray(anchor, dtype=float)
    return eval_cost(state, u, cost) + 0.5 * q_inner(state.problem, diff, diff)


def effective_r(adj, timegrid):
    """Adjoint ``r`` as seen by the control at each node.

    ``u[n]`` drives the implicit step over ``(t_{n-1}, t_n]``; the reverse
    step that covers the same interval produces ``r[n-1]``. Relative to the
    trapezoid weights the interval carries the factor ``dt / w_n`` (2 at
    ``t_N``). ``u[0]`` never enters the dynamics, so its entry is zero.
    """
    w = timegrid.weights
    r = np.zeros_like(adj.r)
    r[1:] = (timegrid.dt / w[1:])[:, None, None] * adj.r[:-1]
    return r


def reduced_gradient(adj, u, cost, timegrid, anchor=None):
    """``r + ν u`` (plus ``u - anchor`` for the adapted problem)."""
    u = np.asarray(u, dtype=float)
    grad = effective_r(adj, timegrid) + cost.nu * u
    if anchor is not None:
        grad = grad + (u - np.asarray(anchor, dtype=float))
    return grad


def project_box(u_raw, box, shape=None):
    """Pointwise clamp into ``[u_min, u_max]``."""
    u_raw = np.asarray(u_raw, dtype=float)
    shape = u_raw.shape if shape is None else shape
    lo = box.lower(shape)
    hi = box.upper(shape)
    # lower bound wins at exact ties (lo == hi handled by the order below)
    return np.maximum(np.minimum(np.broadcast_to(u_raw, shape), hi), lo)


def stationarity_residual(u, grad, box):
    return float(np.max(np.abs(u - project_box(u - grad, box))))


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    max_iters: int = 500
    step0: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    stat_tol: float = 1e-6
    min_step: float = 1e-10
    max_backtracks: int = 12
    anchor: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not self.step0 > 0 or not self.stat_tol > 0 or not self.min_step > 0:
            raise ValueError("step0, stat_tol and min_step must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


HISTORY_FIELDS = ("iter", "phase", "cost", "stationarity", "step", "forward_solves", "backward_solves")


@dataclass
class OptimizeResult:
    u: np.ndarray
    state: object
    adjoint: object
    history: list
    converged: bool
    stalled: bool
    cost: float
    stationarity: float
    forward_solves: int = 0
    backward_solves: int = 0
    notes: list = field(default_factory=list)


class _Evaluator:
    def __init__(self, problem, cost, mode, anchor):
        self.problem = problem
        self.cost = cost
        self.mode = mode
        self.anchor = anchor
        self.forward = 0
        self.backward = 0

    def objective(self, state, u):
        if self.anchor is None:
            return eval_cost(state, u, self.cost)
        return eval_adapted_cost(state, u, self.cost, self.anchor)

    def state(self, u):
        self.forward += 1
        st = solve_state(self.problem, u, self.mode, validate=False)
        return st, self.objective(st, u)

    def gradient(self, st, u):
        self.backward += 1
        adj = solve_adjoint(st, self.cost, self.mode)
        return adj, reduced_gradient(adj, u, self.cost, self.problem.timegrid, self.anchor)


def _bb_step(problem, du, dg, tau, config):
    """Barzilai-Borwein step ``<du,du>/<du,dg>``; keeps ``tau`` if curvature fails."""
    curv = q_inner(problem, du, dg)
    if curv > 0:
        return min(max(q_inner(problem, du, du) / curv, config.min_step), 1e6)
    return tau


def optimize(problem, cost, config, mode, u0=None):
    """Projected gradient for the (adapted) reduced problem.

    Phase ``armijo``: monotone backtracking on ``P(u - τ g)`` with a
    Barzilai-Borwein trial step. The adjoint gradient is consistent with the
    discrete cost only up to O(dt), so once backtracking cannot find
    sufficient decrease the run switches to phase ``fixed``: the projected
    iteration with the last accepted step, which drives the stationarity
    residual of the adjoint gradient to ``stat_tol``.
    """
    box = problem.box
    shape = problem.control_shape
    u = project_box(np.zeros(shape) if u0 is None else u0, box, shape)
    ev = _Evaluator(problem, cost, mode, config.anchor)
    st, J = ev.state(u)
    adj, grad = ev.gradient(st, u)
    res = stationarity_residual(u, grad, box)

    history = []
    notes = []
    phase = "armijo"
    tau = config.step0
    last_ok = config.step0
    prev = None
    stalled = False

    def record(it, step):
        history.append(
            {
                "iter": it,
                "phase": phase,
                "cost": J,
                "stationarity": res,
                "step": step,
                "forward_solves": ev.forward,
                "backward_solves": ev.backward,
            }
        )

    record(0, 0.0)
    it = 0
    while res > config.stat_tol and it < config.max_iters:
        it += 1
        if phase == "armijo":
            if prev is not None:
                tau = _bb_step(problem, u - prev[0], grad - prev[1], tau, config)
            accepted = False
            tries = 0
            while tau >= config.min_step and tries <= config.max_backtracks:
                tries += 1
                cand = project_box(u - tau * grad, box, shape)
                st_c, J_c = ev.state(cand)
                decrease = q_inner(problem, grad, u - cand)
                if J_c <= J - config.armijo_c * decrease:
                    accepted = True
                    break
                tau *= config.shrink
            if not accepted:
                phase = "fixed"
                notes.append(f"line search exhausted at iteration {it}; fixed-step phase")
                log.info("switching to fixed-step phase at iteration %d", it)
                tau = last_ok
                it -= 1
                continue
            last_ok = tau
        else:
            if prev is not None:
                tau = _bb_step(problem, u - prev[0], grad - prev[1], tau, config)
            cand = project_box(u - tau * grad, box, shape)
            st_c, J_c = ev.state(cand)
        prev = (u, grad)
        u, st, J = cand, st_c, J_c
        adj, grad = ev.gradient(st, u)
        new_res = stationarity_residual(u, grad, box)
        if phase == "fixed" and new_res > 2.0 * res:
            tau *= config.shrink
            if tau < config.min_step:
                stalled = True
                notes.append("fixed-step phase diverged")
                res = new_res
                record(it, tau)
                break
        res = new_res
        record(it, tau)

    converged = res <= config.stat_tol
    if not converged and not stalled and it >= config.max_iters:
        notes.append("iteration budget exhausted")
    return OptimizeResult(
        u=u,
        state=st,
        adjoint=adj,
        history=history,
        converged=converged,
        stalled=stalled,
        cost=J,
        stationarity=res,
        forward_solves=ev.forward,
        backward_solves=ev.backward,
        notes=notes,
    )


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row[k]) for k in HISTORY_FIELDS})


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


# --------------------------------------------------------------------------
# certificates and gradient check
# --------------------------------------------------------------------------


def clamp_residual(u, adj, cost, problem):
    """``‖u - clamp(-r/ν)‖∞``; requires ``ν > 0``."""
    if not cost.nu > 0:
        raise ValueError("the clamp formula needs nu > 0")
    r = effective_r(adj, problem.timegrid)
    target = project_box(-r / cost.nu, problem.box, np.shape(u))
    return float(np.max(np.abs(u - target)))


def variational_samples(problem, u, grad, n_samples=20, seed=0):
    """``∫_Q g (v - u)`` for random admissible ``v`` with their scales.

    Returns a list of ``(value, scale)`` with ``scale = |Q| ‖v - u‖∞``.
    Finite box bounds draw ``v`` uniformly in the box; otherwise ``v`` is a
    bounded random perturbation of ``u`` projected into the box.
    """
    rng = np.random.default_rng(seed)
    box = problem.box
    shape = problem.control_shape
    lo = box.lower(shape)
    hi = box.upper(shape)
    q_measure = problem.grid.area * problem.timegrid.t_final
    out = []
    for _ in range(n_samples):
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            v = lo + (hi - lo) * rng.random(shape)
        else:
            v = project_box(u + rng.uniform(-1.0, 1.0, shape), box, shape)
        diff = v - u
        out.append((q_inner(problem, grad, diff), q_measure * float(np.max(np.abs(diff)))))
    return out


def smooth_direction(problem, rng, modes=3):
    """Random smooth space-time direction, reproducible across resolutions."""
    X, Y = problem.grid.centers
    lx, ly = problem.grid.lx, problem.grid.ly
    t = problem.timegrid.times / problem.timegrid.t_final
    out = np.zeros(problem.control_shape)
    for _ in range(modes):
        kx, ky = rng.integers(0, 4, size=2)
        c = rng.normal(size=3)
        space = np.cos(kx * np.pi * X / lx) * np.cos(ky * np.pi * Y / ly)
        time = c[0] + c[1] * np.cos(np.pi * t) + c[2] * np.sin(np.pi * t)
        out += time[:, None, None] * space[None, :, :]
    return out


#: relative size of a directional derivative treated as structurally zero
DEGENERATE_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    adjoint: list
    finite_difference: list
    relative_errors: list
    tau: float

    @property
    def max_relative_error(self):
        return max(self.relative_errors)


def gradient_check(problem, cost, mode, u=None, n_dirs=5, tau=1e-4, seed=0, anchor=None, workers=1):
    """Adjoint directional derivatives against central differences.

    The perturbed solves are independent and run on ``workers`` threads.
    """
    shape = problem.control_shape
    u = np.zeros(shape) if u is None else np.asarray(u, dtype=float)
    st = solve_state(problem, u, mode, check_box=False)
    adj = solve_adjoint(st, cost, mode)
    grad = reduced_gradient(adj, u, cost, problem.timegrid, anchor)
    rng = np.random.default_rng(seed)

    def J(uu):
        s = solve_state(problem, uu, mode, validate=False, check_box=False)
        if anchor is None:
            return eval_cost(s, uu, cost)
        return eval_adapted_cost(s, uu, cost, anchor)

    dirs = [smooth_direction(problem, rng) for _ in range(n_dirs)]
    points = [u + s * tau * d for d in dirs for s in (1.0, -1.0)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(J, points))
    else:
        values = [J(p) for p in points]
    gnorm = q_norm(problem, grad)
    ad, fd, rel = [], [], []
    for i, d in enumerate(dirs):
        a = q_inner(problem, grad, d)
        f = (values[2 * i] - values[2 * i + 1]) / (2.0 * tau)
        ad.append(a)
        fd.append(f)
        # directions orthogonal to the gradient (symmetry) have derivative
        # zero; measure those against the Cauchy-Schwarz scale instead
        scale = max(abs(f), DEGENERATE_FLOOR * gnorm * q_norm(problem, d), 1e-300)
        rel.append(abs(a - f) / scale)
    return GradCheckReport(ad, fd, rel, tau)
