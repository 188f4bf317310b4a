"""Deep-quench continuation: state rate studies and adapted control sweeps.

The logarithmic family ``α h`` approaches the double obstacle as ``α → 0``.
Two studies are provided:

* :func:`state_rate_study` solves the state for a fixed control along a
  decreasing schedule, measures consecutive differences in the norms of the
  stability estimate (``C([0,T]; V*) ∩ L²(0,T; V)`` for ``φ`` and
  ``H¹(0,T; H) ∩ C([0,T]; V)`` for ``w``) and fits ``log E`` against
  ``log(α_i - α_j)``. Errors against a penalized obstacle solve (``ε``
  disclosed) are reported alongside.
* :func:`control_continuation` solves the adapted control problems along the
  schedule with warm starts and tracks the distance to an anchor control and
  the gap between adapted and anchor costs.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from .control import (
    OptimizerConfig,
    eval_adapted_cost,
    eval_cost,
    optimize,
    project_box,
    q_norm,
)
from .potentials import LogQuench, obstacle_default
from .state import StateSolveError, separation_report, solve_state

log = logging.getLogger(__name__)

#: pairs whose combined error is below this are the inactive-obstacle regime
INACTIVE_TOL = 1e-9


class StudyError(RuntimeError):
    """Solver failure inside a study, tagged with the offending ``α``."""

    def __init__(self, alpha, exc):
        super().__init__(f"alpha = {alpha:g}: {exc}")
        self.alpha = alpha
        self.__cause__ = exc


@dataclass(frozen=True)
class QuenchSchedule:
    alphas: tuple

    def __post_init__(self):
        al = tuple(float(a) for a in self.alphas)
        if not al:
            raise ValueError("the schedule needs at least one alpha")
        if any(not (0.0 < a <= 1.0) for a in al):
            raise ValueError("schedule values must lie in (0, 1]")
        if any(b >= a for a, b in zip(al, al[1:])):
            raise ValueError("schedule must be strictly decreasing")
        object.__setattr__(self, "alphas", al)

    @classmethod
    def geometric(cls, alpha0=0.1, levels=4, ratio=0.5):
        return cls(tuple(alpha0 * ratio**k for k in range(levels)))

    def __len__(self):
        return len(self.alphas)


# --------------------------------------------------------------------------
# error norms
# --------------------------------------------------------------------------


def phi_error(grid, timegrid, d):
    """``max_n ‖d(t_n)‖_* + ‖d‖_{L²(0,T;V)}``."""
    dual = max(g.dual_norm(grid, x) for x in d)
    h1sq = np.array([g.h1_norm(grid, x) ** 2 for x in d])
    return dual + math.sqrt(float(np.dot(timegrid.weights, h1sq)))


def w_error(grid, timegrid, dw, dv):
    """``‖dw‖_{H¹(0,T;H)} + max_n ‖dw(t_n)‖_V``, with ``∂_t dw = dv``."""
    l2 = np.array([grid.l2_norm(x) ** 2 for x in dw])
    l2v = np.array([grid.l2_norm(x) ** 2 for x in dv])
    h1t = math.sqrt(float(np.dot(timegrid.weights, l2 + l2v)))
    return h1t + max(g.h1_norm(grid, x) for x in dw)


def loglog_fit(x, y):
    """Least-squares line of ``log y`` on ``log x``.

    Returns ``(slope, intercept, rms_residual)``; ``nan`` entries when fewer
    than two points are available.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return math.nan, math.nan, math.nan
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


# --------------------------------------------------------------------------
# state rate study
# --------------------------------------------------------------------------


@dataclass
class PairError:
    alpha_i: float
    alpha_j: float
    phi_error: float
    w_error: float
    inactive: bool


@dataclass
class RateReport:
    alphas: list
    pairs: list
    slope: float
    intercept: float
    residual: float
    w_slope: float
    w_intercept: float
    w_residual: float
    margins: dict  # alpha -> 1 - max|φ|
    extremes: dict = field(default_factory=dict)  # alpha -> (min φ, max φ)
    obstacle_eps: float = math.nan
    obstacle_errors: dict = field(default_factory=dict)  # alpha -> (phi, w) error
    obstacle_slope: float = math.nan
    control_distances: list = field(default_factory=list)

    @property
    def fitted_pairs(self):
        return [p for p in self.pairs if not p.inactive]

    def as_dict(self):
        return {
            "alphas": list(self.alphas),
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "w_slope": self.w_slope,
            "w_intercept": self.w_intercept,
            "w_residual": self.w_residual,
            "margins": {repr(a): m for a, m in self.margins.items()},
            "obstacle_eps": self.obstacle_eps,
            "obstacle_slope": self.obstacle_slope,
            "inactive_pairs": sum(p.inactive for p in self.pairs),
        }


def _solve_all(problem, u, modes, workers):
    def run(mode):
        try:
            return solve_state(problem, u, mode)
        except StateSolveError as exc:
            raise StudyError(getattr(mode, "alpha", 0.0), exc) from exc

    if workers <= 1 or len(modes) == 1:
        return [run(m) for m in modes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, modes))


def state_rate_study(problem, u, schedule, obstacle=None, with_obstacle=True, workers=1):
    """Consecutive-pair deep-quench errors for a fixed control.

    ``obstacle`` is the penalized surrogate reference (default
    :func:`quenchlab.potentials.obstacle_default`); pass
    ``with_obstacle=False`` to skip it. Pairs with a combined ``φ`` error
    below :data:`INACTIVE_TOL` are flagged inactive and left out of the fits.
    Independent solves run on ``workers`` threads; results do not depend on
    the thread count.
    """
    if len(schedule) < 2:
        raise ValueError("a rate study needs at least two alphas")
    grid, tg = problem.grid, problem.timegrid
    modes = [LogQuench(a) for a in schedule.alphas]
    if with_obstacle:
        modes.append(obstacle or obstacle_default())
    solved = _solve_all(problem, u, modes, workers)
    trajs = solved[: len(schedule)]
    margins = {}
    extremes = {}
    for a, tr in zip(schedule.alphas, trajs):
        lo, hi = separation_report(tr)
        extremes[a] = (lo, hi)
        margins[a] = 1.0 - max(abs(lo), abs(hi))
        log.info("alpha %g: margin %.3e", a, margins[a])

    pairs = []
    for (a1, t1), (a2, t2) in zip(zip(schedule.alphas, trajs), zip(schedule.alphas[1:], trajs[1:])):
        e_phi = phi_error(grid, tg, t1.phi - t2.phi)
        e_w = w_error(grid, tg, t1.w - t2.w, t1.v - t2.v)
        pairs.append(PairError(a1, a2, e_phi, e_w, e_phi <= INACTIVE_TOL))

    fit = [p for p in pairs if not p.inactive]
    dx = [p.alpha_i - p.alpha_j for p in fit]
    slope, icpt, res = loglog_fit(dx, [p.phi_error for p in fit])
    wfit = [p for p in fit if p.w_error > 0]
    w_slope, w_icpt, w_res = loglog_fit(
        [p.alpha_i - p.alpha_j for p in wfit], [p.w_error for p in wfit]
    )
    report = RateReport(
        list(schedule.alphas), pairs, slope, icpt, res, w_slope, w_icpt, w_res, margins, extremes
    )

    if with_obstacle:
        ref = solved[-1]
        report.obstacle_eps = float(modes[-1].eps)
        for a, tr in zip(schedule.alphas, trajs):
            report.obstacle_errors[a] = (
                phi_error(grid, tg, tr.phi - ref.phi),
                w_error(grid, tg, tr.w - ref.w, tr.v - ref.v),
            )
        al = list(report.obstacle_errors)
        report.obstacle_slope = loglog_fit(al, [report.obstacle_errors[a][0] for a in al])[0]
    return report


# --------------------------------------------------------------------------
# control continuation
# --------------------------------------------------------------------------


def warm_start(problem, previous=None):
    """Initial control for the next ``α``: the previous solution, projected."""
    shape = problem.control_shape
    base = np.zeros(shape) if previous is None else previous
    return project_box(base, problem.box, shape)


@dataclass
class ContinuationEntry:
    alpha: float
    status: str  # "converged", "not_converged" or "failed"
    distance: float = math.nan
    adapted_cost: float = math.nan
    cost: float = math.nan
    gap: float = math.nan
    stationarity: float = math.nan
    iterations: int = 0
    message: str = ""


@dataclass
class ContinuationReport:
    entries: list
    controls: dict  # alpha -> control (successful runs only)
    anchor: np.ndarray
    anchor_source: str
    anchor_cost: float
    rate: RateReport = None

    @property
    def distances(self):
        return [e.distance for e in self.entries]

    @property
    def gaps(self):
        return [e.gap for e in self.entries]


def anchor_from_optimizer(problem, cost, alpha, config=None, u0=None):
    """Solve the unadapted problem at ``alpha`` to serve as anchor."""
    cfg = config or OptimizerConfig()
    plain = OptimizerConfig(**{**cfg.__dict__, "anchor": None})
    return optimize(problem, cost, plain, LogQuench(alpha), u0=u0)


def control_continuation(problem, cost, schedule, anchor=None, config=None, anchor_source=None):
    """Adapted problems along ``schedule`` with warm starts.

    Without ``anchor`` the optimizer's solution of the unadapted problem at the
    smallest ``α`` is used and disclosed as such. The anchor cost is
    ``J(S(u*), u*)`` with ``S`` the state map at that same smallest ``α``.
    Per-``α`` failures are recorded and the sweep continues.
    """
    cfg = config or OptimizerConfig()
    a_min = schedule.alphas[-1]
    if anchor is None:
        res = anchor_from_optimizer(problem, cost, a_min, cfg)
        anchor = res.u
        anchor_source = anchor_source or f"optimizer solution at alpha = {a_min:g}"
        anchor_cost = res.cost
    else:
        anchor = project_box(anchor, problem.box, problem.control_shape)
        anchor_source = anchor_source or "user supplied"
        st = solve_state(problem, anchor, LogQuench(a_min), validate=False)
        anchor_cost = eval_cost(st, anchor, cost)

    adapted = OptimizerConfig(**{**cfg.__dict__, "anchor": anchor})
    entries = []
    controls = {}
    prev = None
    for a in schedule.alphas:
        u0 = warm_start(problem, prev)
        try:
            res = optimize(problem, cost, adapted, LogQuench(a), u0=u0)
        except Exception as exc:  # recorded, the sweep goes on
            log.warning("alpha %g failed: %s", a, exc)
            entries.append(ContinuationEntry(a, "failed", message=str(exc)))
            continue
        prev = res.u
        controls[a] = res.u
        jt = eval_adapted_cost(res.state, res.u, cost, anchor)
        entries.append(
            ContinuationEntry(
                alpha=a,
                status="converged" if res.converged else "not_converged",
                distance=q_norm(problem, res.u - anchor),
                adapted_cost=jt,
                cost=eval_cost(res.state, res.u, cost),
                gap=abs(jt - anchor_cost),
                stationarity=res.stationarity,
                iterations=len(res.history) - 1,
                message="; ".join(res.notes),
            )
        )

    dists = []
    al = [a for a in schedule.alphas if a in controls]
    for a1, a2 in zip(al, al[1:]):
        dists.append((a1, a2, q_norm(problem, controls[a1] - controls[a2])))
    rate = RateReport(
        alphas=list(schedule.alphas),
        pairs=[],
        slope=math.nan,
        intercept=math.nan,
        residual=math.nan,
        w_slope=math.nan,
        w_intercept=math.nan,
        w_residual=math.nan,
        margins={},
        control_distances=dists,
    )
    return ContinuationReport(entries, controls, anchor, anchor_source, anchor_cost, rate)


__all__ = [
    "ContinuationEntry",
    "ContinuationReport",
    "INACTIVE_TOL",
    "PairError",
    "QuenchSchedule",
    "RateReport",
    "StudyError",
    "anchor_from_optimizer",
    "control_continuation",
    "loglog_fit",
    "phi_error",
    "state_rate_study",
    "w_error",
    "warm_start",
]
