"""Forward solver for the Cahn-Hilliard / Green-Naghdi state system.

One time step is a staggered pair of sub-steps:

1. Cahn-Hilliard with source term, convex part implicit and concave part
   explicit, thermal coupling lagged::

       (φ⁺ - φ)/dt - Δμ⁺ + γφ⁺ = f⁺
       μ⁺ = -Δφ⁺ + G'(φ⁺) + F'(φ) + a - b v

   The mean of φ⁺ follows from the scalar recurrence alone (Δ_h has zero
   mean), so Newton only acts on the mean-free part, in the H⁻¹ form whose
   Jacobian ``(1/dt + γ) N - Δ_h + P G''(φ) P`` is SPD.

2. Green-Naghdi thermal displacement with the fresh ``∂_t φ``::

       (v⁺ - v)/dt - Δ(κ1 v⁺ + κ2 w⁺) + λ(φ⁺ - φ)/dt = u⁺,   w⁺ = w + dt v⁺

   which is one DCT-diagonal solve.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grid as g
from .linalg import ZeroMeanSystem
from .potentials import ConcavePart, ObstaclePenalty

log = logging.getLogger(__name__)

# Newton iterates must stay this far inside (-1, 1) in LogQuench mode.
INTERIOR_MARGIN = 1e-14
MAX_NEWTON = 50
MIN_DAMPING = 2.0**-40


class StateSolveError(RuntimeError):
    """Base class; ``step`` is the index of the failing time step (1-based)."""

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step


class NewtonDiverged(StateSolveError):
    pass


class SeparationLoss(StateSolveError):
    pass


class AssumptionViolation(ValueError):
    def __init__(self, report):
        super().__init__("; ".join(f"[{v.code}] {v.message}" for v in report.violations))
        self.report = report


# --------------------------------------------------------------------------
# problem description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysParams:
    gamma: float = 1.0
    a: float = 0.5
    b: float = 0.5
    kappa1: float = 1.0
    kappa2: float = 1.0
    lam: float = 1.0

    def as_dict(self):
        return {
            "gamma": self.gamma,
            "a": self.a,
            "b": self.b,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "lambda": self.lam,
        }


@dataclass
class ProblemData:
    """Source ``f`` (time-indexed, ``(nt+1, nx, ny)``) and initial data."""

    f: np.ndarray
    phi0: np.ndarray
    w0: np.ndarray
    w1: np.ndarray


@dataclass
class ControlBox:
    """Pointwise bounds; scalars or arrays broadcastable to ``(nt+1, nx, ny)``."""

    u_min: object = -np.inf
    u_max: object = np.inf

    def lower(self, shape):
        return np.broadcast_to(np.asarray(self.u_min, dtype=float), shape)

    def upper(self, shape):
        return np.broadcast_to(np.asarray(self.u_max, dtype=float), shape)


@dataclass
class Problem:
    grid: g.Grid
    timegrid: g.TimeGrid
    params: PhysParams
    data: ProblemData
    concave: ConcavePart = field(default_factory=ConcavePart)
    box: ControlBox = field(default_factory=ControlBox)

    @property
    def control_shape(self):
        return (self.timegrid.nt + 1,) + self.grid.shape

    def zero_control(self):
        return np.zeros(self.control_shape)


# --------------------------------------------------------------------------
# assumption checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass
class ValidationReport:
    violations: list
    margin: float
    rho: float
    quantities: dict

    @property
    def ok(self):
        return not self.violations

    def as_dict(self):
        return {
            "ok": self.ok,
            "margin": self.margin,
            "rho": self.rho,
            "quantities": self.quantities,
            "violations": [{"code": v.code, "message": v.message} for v in self.violations],
        }


def validate_assumptions(params, data, box=None):
    """Check positivity (A1), box ordering (BOX) and the interior conditions (A4)."""
    out = []
    for name, val in params.as_dict().items():
        if not val > 0:
            out.append(Violation("A1", f"{name} must be positive, got {val}"))
    for name in ("f", "phi0", "w0", "w1"):
        arr = np.asarray(getattr(data, name))
        if not np.all(np.isfinite(arr)):
            out.append(Violation("A3", f"{name} has non-finite values"))
    if box is not None:
        lo = np.asarray(box.u_min, dtype=float)
        hi = np.asarray(box.u_max, dtype=float)
        if np.any(lo > hi):
            out.append(Violation("BOX", "u_min must not exceed u_max"))

    phi0 = np.asarray(data.phi0, dtype=float)
    fmax = float(np.max(np.abs(data.f))) if np.size(data.f) else 0.0
    rho = fmax / params.gamma if params.gamma > 0 else np.inf
    m0 = float(np.mean(phi0))
    quantities = {
        "inf_phi0": float(phi0.min()),
        "sup_phi0": float(phi0.max()),
        "lower_mass_bound": -rho - max(-m0, 0.0),
        "upper_mass_bound": rho + max(m0, 0.0),
    }
    margin = min(1.0 - abs(q) for q in quantities.values())
    for name, q in quantities.items():
        if not -1.0 < q < 1.0:
            out.append(Violation("A4", f"{name} = {q:.6g} is not inside (-1, 1)"))
    return ValidationReport(out, float(margin), float(rho), quantities)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass
class StepState:
    phi: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    v: np.ndarray
    xi: Optional[np.ndarray] = None
    newton_iters: int = 0
    linear_iters: int = 0


@dataclass
class StateTrajectory:
    problem: Problem
    mode: object
    phi: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    v: np.ndarray
    xi: Optional[np.ndarray] = None
    newton_iters: Optional[np.ndarray] = None
    linear_iters: Optional[np.ndarray] = None
    eps_final: Optional[float] = None

    @property
    def temperature(self):
        """``ϑ = ∂_t w``."""
        return self.v

    @property
    def source(self):
        """``S = f - γ φ``."""
        return self.problem.data.f - self.problem.params.gamma * self.phi

    @property
    def means(self):
        return self.phi.mean(axis=(1, 2))

    def diagnostics(self):
        """Per-step table as a dict of equal-length arrays."""
        tg = self.problem.timegrid
        return {
            "step": np.arange(tg.nt + 1),
            "t": tg.times,
            "mean_phi": self.means,
            "min_phi": self.phi.min(axis=(1, 2)),
            "max_phi": self.phi.max(axis=(1, 2)),
            "mean_w": self.w.mean(axis=(1, 2)),
            "mean_v": self.v.mean(axis=(1, 2)),
            "newton_iters": self.newton_iters,
            "linear_iters": self.linear_iters,
        }


def separation_report(traj):
    """Discrete analogues ``(r_low, r_high)`` of the separation constants."""
    return float(traj.phi.min()), float(traj.phi.max())


def mass_balance_residuals(traj):
    """``(m^{n+1} - m^n)/dt + γ m^{n+1} - mean f^{n+1}`` for every step."""
    p = traj.problem
    dt = p.timegrid.dt
    m = traj.means
    fbar = np.asarray(p.data.f).mean(axis=(1, 2))
    return (m[1:] - m[:-1]) / dt + p.params.gamma * m[1:] - fbar[1:]


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------


def _initial_mu(problem, mode, phi0, w1):
    G1, _ = mode.derivs(np.asarray(phi0, dtype=float))
    p = problem.params
    return (
        -g.laplacian_neumann(problem.grid, phi0)
        + G1
        + problem.concave.prime(phi0)
        + p.a
        - p.b * w1
    )


def _ch_substep(problem, mode, phi, v, f_next, step_index, guess=None):
    """Cahn-Hilliard half of a time step; returns ``(phi, mu, G', newton, linear)``.

    Newton acts on the H^-1 form of the mean-free equations. The mean of the
    new iterate is fixed by the scalar recurrence. In LogQuench mode the update
    is taken in ``theta = artanh(phi)``, where ``h'`` is linear, so iterates
    never leave (-1, 1) and no boundary damping is needed.
    """
    grid = problem.grid
    p = problem.params
    dt = problem.timegrid.dt
    acoef = 1.0 / dt + p.gamma
    m_old = float(phi.mean())
    m_new = (m_old + dt * float(f_next.mean())) / (1.0 + p.gamma * dt)
    explicit = problem.concave.prime(phi) + p.a - p.b * v
    rhs_n = g.inv_neumann_laplacian(grid, _center(phi / dt + f_next), tol=np.inf)
    tol_n = 1e-10 * (1.0 + float(np.max(np.abs(f_next))))
    K = grid.laplacian_norm
    theta_cap = float(np.arctanh(1.0 - INTERIOR_MARGIN))

    def lap(x):
        return g.laplacian_neumann(grid, x)

    def evaluate(ph):
        G1, G2 = mode.derivs(ph)
        mu = -lap(ph) + G1 + explicit
        n_psi = g.inv_neumann_laplacian(grid, _center(ph), tol=np.inf)
        RH = acoef * n_psi - rhs_n + _center(mu)
        res = (ph - phi) / dt + p.gamma * ph - f_next - lap(mu)
        floor = 32 * np.finfo(float).eps * K * (
            K * np.max(np.abs(ph)) + np.max(np.abs(G1)) + np.max(np.abs(explicit)) + np.max(G2)
        )
        return ph, mu, G1, G2, RH, res, floor

    def converged(cand):
        return np.max(np.abs(cand[5])) <= max(tol_n, cand[6]) and abs(
            float(cand[0].mean()) - m_new
        ) <= 1e-13 * (1.0 + abs(m_new))

    start = phi if guess is None else guess
    if mode.interior:
        theta = np.clip(np.arctanh(np.clip(start, -1.0, 1.0)), -theta_cap, theta_cap)
        ph = np.tanh(theta)
    else:
        ph = m_new + _center(start)
    cur = evaluate(ph)
    newton = 0
    lin = 0
    while not converged(cur):
        newton += 1
        if newton > MAX_NEWTON:
            raise NewtonDiverged(
                f"no convergence in {MAX_NEWTON} Newton iterations "
                f"(residual {np.max(np.abs(cur[5])):.3e}); reduce dt",
                step_index,
            )
        ph, _, _, G2, RH, _, _ = cur
        dm = m_new - float(ph.mean())
        system = ZeroMeanSystem(grid, acoef, G2)
        zeta, it, _ = system.solve(-RH - dm * _center(G2))
        lin += it
        delta = zeta + dm
        norm0 = np.linalg.norm(RH) + abs(dm) * np.sqrt(RH.size)
        if mode.interior:
            dtheta = delta / ((1.0 - ph) * (1.0 + ph))
        step_len = 1.0
        while True:
            if mode.interior:
                trial_theta = theta + step_len * dtheta
                trial = np.tanh(trial_theta)
                ok = np.max(np.abs(trial_theta)) <= theta_cap
            else:
                trial = ph + step_len * delta
                ok = True
            if ok:
                cand = evaluate(trial)
                norm1 = np.linalg.norm(cand[4]) + abs(m_new - float(trial.mean())) * np.sqrt(
                    RH.size
                )
                if norm1 <= (1.0 - 1e-4 * step_len) * norm0 or converged(cand):
                    break
            step_len *= 0.5
            if step_len < MIN_DAMPING:
                raise NewtonDiverged("Newton damping underflow; reduce dt", step_index)
        if mode.interior:
            theta = trial_theta
        cur = cand

    ph = cur[0]
    shift = m_new - float(ph.mean())
    if shift != 0.0:
        # restore the exact mean; the shift is at rounding level here
        cur = evaluate(ph + shift)
    ph, mu, G1 = cur[0], cur[1], cur[2]
    if mode.interior and np.max(np.abs(ph)) >= 1.0:
        raise SeparationLoss("|phi| reached 1 in LogQuench mode", step_index)
    return ph, mu, G1, newton, lin


def _center(x):
    return x - x.mean()


def _thermal_substep(problem, phi_old, phi_new, w, v, u_next):
    grid = problem.grid
    p = problem.params
    dt = problem.timegrid.dt
    rhs = (
        v / dt
        + p.kappa2 * g.laplacian_neumann(grid, w)
        - p.lam * (phi_new - phi_old) / dt
        + u_next
    )
    diag = 1.0 / dt + (p.kappa1 + dt * p.kappa2) * grid.symbol
    v_new = g.spectral_solve(grid, rhs, diag)
    w_new = w + dt * v_new
    return w_new, v_new


def step(problem, state, u_next, f_next, mode, step_index=None):
    """Advance ``state`` (at t_n) by one time step; returns the state at t_{n+1}."""
    phi = state.phi
    if mode.interior and np.max(np.abs(phi)) >= 1.0:
        raise SeparationLoss("prior state violates |phi| < 1", step_index)
    if isinstance(mode, ObstaclePenalty):
        guess = None
        newton = lin = 0
        for eps in mode.continuation:
            guess, mu, G1, n_it, l_it = _ch_substep(
                problem, mode.with_eps(eps), phi, state.v, f_next, step_index, guess
            )
            newton += n_it
            lin += l_it
        ph, xi = guess, G1
    else:
        ph, mu, _, newton, lin = _ch_substep(problem, mode, phi, state.v, f_next, step_index)
        xi = None
    w_new, v_new = _thermal_substep(problem, phi, ph, state.w, state.v, u_next)
    return StepState(ph, mu, w_new, v_new, xi, newton, lin)


def check_control(problem, u, tol=1e-12):
    u = np.broadcast_to(np.asarray(u, dtype=float), problem.control_shape)
    lo = problem.box.lower(u.shape)
    hi = problem.box.upper(u.shape)
    if np.any(u < lo - tol) or np.any(u > hi + tol):
        raise ValueError("control violates the box constraints")
    return u


def solve_state(problem, u, mode, validate=True, check_box=True, snapshots=None):
    """Integrate the state system over the whole time grid.

    ``u`` is a time-indexed control (``u[n]`` acts on the step ending at
    ``t_n``; ``u[0]`` is unused). ``snapshots`` is an optional
    :class:`quenchlab.io.SnapshotWriter`.
    """
    if validate:
        report = validate_assumptions(problem.params, problem.data, problem.box)
        if not report.ok:
            raise AssumptionViolation(report)
    if check_box:
        u = check_control(problem, u)
    else:
        u = np.broadcast_to(np.asarray(u, dtype=float), problem.control_shape)

    tg = problem.timegrid
    shape = (tg.nt + 1,) + problem.grid.shape
    phi = np.empty(shape)
    mu = np.empty(shape)
    w = np.empty(shape)
    v = np.empty(shape)
    xi = np.empty(shape) if isinstance(mode, ObstaclePenalty) else None
    newton = np.zeros(tg.nt + 1, dtype=int)
    linear = np.zeros(tg.nt + 1, dtype=int)

    d = problem.data
    phi[0] = d.phi0
    w[0] = d.w0
    v[0] = d.w1
    mu[0] = _initial_mu(problem, mode, d.phi0, d.w1)
    if xi is not None:
        xi[0] = mode.derivs(np.asarray(d.phi0, dtype=float))[0]
    state = StepState(phi[0], mu[0], w[0], v[0])
    f = np.broadcast_to(np.asarray(d.f, dtype=float), shape)
    if snapshots is not None:
        snapshots.maybe_write(0, 0.0, phi=phi[0], mu=mu[0], w=w[0], v=v[0])

    for n in range(tg.nt):
        state = step(problem, state, u[n + 1], f[n + 1], mode, step_index=n + 1)
        phi[n + 1] = state.phi
        mu[n + 1] = state.mu
        w[n + 1] = state.w
        v[n + 1] = state.v
        if xi is not None:
            xi[n + 1] = state.xi
        newton[n + 1] = state.newton_iters
        linear[n + 1] = state.linear_iters
        if snapshots is not None:
            snapshots.maybe_write(
                n + 1, tg.times[n + 1], phi=state.phi, mu=state.mu, w=state.w, v=state.v
            )

    eps_final = mode.eps if isinstance(mode, ObstaclePenalty) else None
    return StateTrajectory(problem, mode, phi, mu, w, v, xi, newton, linear, eps_final)
