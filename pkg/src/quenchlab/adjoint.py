"""Backward-in-time adjoint solver and the diagnostics built on it.

The adjoint system around a state trajectory ``(phi, w, v)`` reads

    -p_t + K q + γ p + (G''(phi) + F'') q - λ r_t = g_adj,      q = K p,
    -r_t + K (κ1 r + κ2 s) - b q = f_adj,                        s = 1⊛r,

with ``K = -Δ_h`` and terminal data ``p(T) = π``, ``r(T) = ρ``, ``s(T) = 0``.
It is discretized with backward Euler running from ``t_N`` to ``t_0``:
each reverse step first solves for ``r`` (one DCT-diagonal solve, with ``s``
and the ``b q`` coupling taken from the later time level), then updates
``s`` by the trapezoid rule and finally solves the ``(p, q)`` block.
Eliminating ``p = mean(p) + N q`` turns that block into the mean-free
system ``(a N + K + P E P) q = P rhs`` of :mod:`quenchlab.linalg`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from .linalg import LinearSolveFailure, ZeroMeanSystem
from .potentials import LogQuench


class CostError(ValueError):
    """Inconsistent cost weights or targets."""


@dataclass
class CostSpec:
    """Tracking weights, control cost and targets.

    Targets are scalars or arrays broadcastable to the time-indexed field
    shape (``*_Q``) or to a single field (``*_Omega``).
    """

    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    beta5: float = 0.0
    beta6: float = 0.0
    nu: float = 0.0
    phi_Q: object = 0.0
    w_Q: object = 0.0
    wprime_Q: object = 0.0
    phi_Omega: object = 0.0
    w_Omega: object = 0.0
    wprime_Omega: object = 0.0

    def __post_init__(self):
        weights = self.weights
        if any(not np.isfinite(x) or x < 0 for x in weights.values()):
            raise CostError("cost weights must be finite and nonnegative")
        if all(x == 0 for x in weights.values()):
            raise CostError("at least one cost weight must be positive (A5)")

    @property
    def weights(self):
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "beta3": self.beta3,
            "beta4": self.beta4,
            "beta5": self.beta5,
            "beta6": self.beta6,
            "nu": self.nu,
        }

    def resolved(self, problem):
        """Targets broadcast to the grid of ``problem`` (read-only views)."""
        tshape = problem.control_shape
        fshape = problem.grid.shape
        out = {}
        try:
            for name in ("phi_Q", "w_Q", "wprime_Q"):
                out[name] = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), tshape)
            for name in ("phi_Omega", "w_Omega", "wprime_Omega"):
                out[name] = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), fshape)
        except ValueError as exc:
            raise CostError(f"target shape does not match the grid: {exc}") from exc
        return out


@dataclass
class AdjointSources:
    f_adj: np.ndarray
    g_adj: np.ndarray
    rho_term: np.ndarray
    pi_term: np.ndarray
    # running-cost parts of f_adj(T) and g_adj(T) (the β5 and β1 summands)
    f_running_T: np.ndarray = None
    g_running_T: np.ndarray = None


@dataclass
class AdjointTrajectory:
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    s: np.ndarray
    sources: AdjointSources
    curvature: np.ndarray  # G''(phi) + F'' at every time level
    linear_iters: np.ndarray = field(default=None)
    approximate: bool = False  # True in obstacle mode

    @property
    def nt(self):
        return self.p.shape[0] - 1


def build_sources(state, cost):
    """Right-hand sides and terminal data of the adjoint system."""
    prob = state.problem
    tg = prob.timegrid
    tgt = cost.resolved(prob)
    lam = prob.params.lam

    wT = state.w[-1] - tgt["w_Omega"]
    f_adj = (
        cost.beta3 * g.convolve_backward(state.w - tgt["w_Q"], tg.dt, tg)
        + cost.beta5 * (state.v - tgt["wprime_Q"])
        + cost.beta4 * wT[None, :, :]
    )
    g_adj = cost.beta1 * (state.phi - tgt["phi_Q"])
    rho = cost.beta6 * (state.v[-1] - tgt["wprime_Omega"])
    pi = cost.beta2 * (state.phi[-1] - tgt["phi_Omega"]) - lam * rho
    f_run = cost.beta5 * (state.v[-1] - tgt["wprime_Q"][-1])
    return AdjointSources(f_adj, g_adj, rho, pi, f_run, g_adj[-1].copy())


def curvature(state, mode):
    """``G''(phi) + F''`` along the trajectory."""
    G2 = np.stack([mode.derivs(ph)[1] for ph in state.phi])
    return G2 + state.problem.concave.second()


def solve_adjoint(state, cost, mode, snapshots=None):
    """Integrate the adjoint system backward from ``T``.

    Terminal data are imposed exactly at ``t_N``. The reverse step from
    ``t_{n+1}`` to ``t_n`` is implicit in the unknowns at ``t_n`` and takes
    everything that depends on the state (sources, ``G''``) and the cross
    couplings ``b q`` and ``F'' q`` from ``t_{n+1}``. The ``κ2`` memory term
    uses ``s = 1⊛r`` by the trapezoid rule, implicitly in ``r^n``.

    Raises :class:`LinearSolveFailure` tagged with the reverse step index.
    """
    prob = state.problem
    grid = prob.grid
    par = prob.params
    dt = prob.timegrid.dt
    nt = prob.timegrid.nt
    lam_k = grid.symbol
    f2 = prob.concave.second()

    src = build_sources(state, cost)
    E = curvature(state, mode)
    G2 = E - f2
    shape = state.phi.shape
    p = np.zeros(shape)
    q = np.zeros(shape)
    r = np.zeros(shape)
    s = np.zeros(shape)
    iters = np.zeros(nt + 1, dtype=int)

    p[nt] = src.pi_term
    q[nt] = _center(-g.laplacian_neumann(grid, p[nt]))
    r[nt] = src.rho_term

    a = 1.0 / dt + par.gamma
    half = 0.5 * dt
    r_diag = 1.0 / dt + (par.kappa1 + half * par.kappa2) * lam_k
    for n in range(nt - 1, -1, -1):
        k = n + 1
        f_k, g_k = src.f_adj[k], src.g_adj[k]
        if k == nt:
            # running-cost sources carry the trapezoid end weight on the last
            # interval; the terminal level has no later μ-equation to couple to
            f_k = f_k - 0.5 * src.f_running_T
            g_k = g_k - 0.5 * src.g_running_T
            q_k = np.zeros_like(q[k])
        else:
            q_k = q[k]
        rhs_r = (
            f_k
            + r[k] / dt
            + par.kappa2 * g.laplacian_neumann(grid, s[k] + half * r[k])
            + par.b * q_k
        )
        r[n] = g.spectral_solve(grid, rhs_r, r_diag)
        s[n] = s[k] + half * (r[n] + r[k])

        rhs = g_k + p[k] / dt - par.lam * (r[n] - r[k]) / dt - f2 * q_k
        try:
            qn, it, _ = ZeroMeanSystem(grid, a, G2[k]).solve(_center(rhs))
        except LinearSolveFailure as exc:
            raise LinearSolveFailure(f"reverse step {n}: {exc}") from exc
        iters[n] = it
        q[n] = qn
        pbar = (float(rhs.mean()) - float((G2[k] * qn).mean())) / a
        p[n] = pbar + g.inv_neumann_laplacian(grid, qn, tol=np.inf)

    if snapshots is not None:
        for n in range(nt + 1):
            snapshots.maybe_write(n, prob.timegrid.times[n], p=p[n], q=q[n], r=r[n])
    return AdjointTrajectory(
        p, q, r, s, src, E, iters, approximate=not isinstance(mode, LogQuench)
    )


def _center(x):
    return x - x.mean()


def mean_p_identity_residual(adj, state, cost=None, mode=None):
    """Residual of the mean identity for ``p`` at every time node.

    ``mean p(t) - [mean π + λ mean ρ - λ mean r(t) + ∫_t^T mean(g - γp - E q)]``
    with the time integral taken by the trapezoid rule. ``cost`` and ``mode``
    are accepted for symmetry; the sources and curvature stored on ``adj``
    are the ones the solve used.
    """
    prob = state.problem
    tg = prob.timegrid
    par = prob.params
    src = adj.sources
    integrand = (
        src.g_adj.mean(axis=(1, 2))
        - par.gamma * adj.p.mean(axis=(1, 2))
        - (adj.curvature * adj.q).mean(axis=(1, 2))
    )
    tail = g.convolve_backward(integrand, tg.dt, tg)
    rhs = (
        float(src.pi_term.mean())
        + par.lam * float(src.rho_term.mean())
        - par.lam * adj.r.mean(axis=(1, 2))
        + tail
    )
    return adj.p.mean(axis=(1, 2)) - rhs


def slackness_value(adj, state, mode):
    """``∫_Q α h''(phi) |q|²`` (trapezoid in time, cell sums in space)."""
    if not isinstance(mode, LogQuench):
        raise TypeError("slackness is defined for LogQuench trajectories")
    phi = state.phi
    base = 2.0 / ((1.0 - phi) * (1.0 + phi)) * adj.q**2
    per_step = base.sum(axis=(1, 2)) * state.problem.grid.cell_area
    return mode.alpha * float(np.dot(state.problem.timegrid.weights, per_step))


def reduced_nq_diagnostics(adj, grid, rtol=1e-9):
    """``N q(t_n)`` for every node, after checking ``p - mean p = N q``.

    Raises :class:`AssertionError` when the splitting identity fails and
    :class:`quenchlab.grid.NonZeroMean` when ``q`` is not mean free.
    """
    out = np.empty_like(adj.q)
    for n in range(adj.q.shape[0]):
        nq = g.inv_neumann_laplacian(grid, adj.q[n])
        dev = float(np.max(np.abs(adj.p[n] - adj.p[n].mean() - nq)))
        scale = float(np.max(np.abs(adj.p[n])))
        if dev > rtol * scale:
            raise AssertionError(f"splitting identity fails at node {n}: {dev:.3e}")
        out[n] = nq
    return out


def adjoint_summary(adj):
    """Scalar summary used by reports."""
    return {
        "max_abs_mean_q": float(np.max(np.abs(adj.q.mean(axis=(1, 2))))),
        "max_abs_r": float(np.max(np.abs(adj.r))),
        "linear_iters": int(np.sum(adj.linear_iters)),
        "approximate": bool(adj.approximate),
    }


__all__ = [
    "AdjointSources",
    "AdjointTrajectory",
    "CostError",
    "CostSpec",
    "adjoint_summary",
    "build_sources",
    "curvature",
    "mean_p_identity_residual",
    "reduced_nq_diagnostics",
    "slackness_value",
    "solve_adjoint",
]
