"""Forward solver: assumption checks, exact identities, dense oracle, consistency order."""

import numpy as np
import pytest
import sympy as sp

from quenchlab import grid as g
from quenchlab.grid import Grid, TimeGrid
from quenchlab.io import SnapshotWriter, read_snapshot
from quenchlab.linalg import neumann_matrix
from quenchlab.potentials import ConcavePart, LogQuench, ObstaclePenalty, h_prime, h_second
from quenchlab.state import (
    AssumptionViolation,
    ControlBox,
    PhysParams,
    Problem,
    ProblemData,
    SeparationLoss,
    StepState,
    mass_balance_residuals,
    separation_report,
    solve_state,
    step,
    validate_assumptions,
)


def make_problem(nx=8, nt=10, T=1.0, phi0=0.0, f=0.0, params=None, box=(-1.0, 1.0), L=1.0, c2=1.0):
    grid = Grid(nx, nx, L, L)
    tg = TimeGrid(T, nt)
    phi0 = np.broadcast_to(np.asarray(phi0, dtype=float), grid.shape).copy()
    f = np.broadcast_to(np.asarray(f, dtype=float), (nt + 1,) + grid.shape).copy()
    zero = np.zeros(grid.shape)
    return Problem(
        grid,
        tg,
        params or PhysParams(),
        ProblemData(f, phi0, zero, zero.copy()),
        ConcavePart(0.0, c2),
        ControlBox(*box),
    )


# ---- assumptions ---------------------------------------------------------------


def test_validate_trivial_data_passes_with_unit_margin():
    p = make_problem()
    rep = validate_assumptions(p.params, p.data, p.box)
    assert rep.ok and rep.margin == 1.0


def test_validate_reports_mass_bound_violation():
    p = make_problem(phi0=0.5, f=0.6, params=PhysParams(gamma=1.0))
    rep = validate_assumptions(p.params, p.data, p.box)
    assert not rep.ok
    assert rep.quantities["upper_mass_bound"] == pytest.approx(1.1)
    assert [v.code for v in rep.violations] == ["A4"]


def test_validate_reports_box_ordering():
    p = make_problem(box=(1.0, 0.0))
    rep = validate_assumptions(p.params, p.data, p.box)
    assert [v.code for v in rep.violations] == ["BOX"]


def test_validate_reports_nonpositive_constants():
    p = make_problem(params=PhysParams(gamma=-1.0, kappa2=0.0))
    codes = [v.code for v in validate_assumptions(p.params, p.data).violations]
    assert codes.count("A1") == 2


def test_solver_refuses_invalid_data():
    p = make_problem(phi0=0.5, f=0.6, params=PhysParams(gamma=1.0))
    with pytest.raises(AssumptionViolation):
        solve_state(p, p.zero_control(), LogQuench(0.5))


def test_control_outside_box_is_rejected():
    p = make_problem(nt=2)
    with pytest.raises(ValueError):
        solve_state(p, np.full(p.control_shape, 2.0), LogQuench(0.5))


# ---- exact identities ----------------------------------------------------------


def test_zero_data_gives_zero_state():
    p = make_problem(params=PhysParams(a=0.0))
    tr = solve_state(p, p.zero_control(), LogQuench(0.3), validate=False)
    for field in (tr.phi, tr.mu, tr.w, tr.v):
        assert not np.any(field)
    assert separation_report(tr) == (0.0, 0.0)


def test_zero_data_with_positive_a_keeps_phi_and_w_zero():
    p = make_problem()
    tr = solve_state(p, p.zero_control(), LogQuench(0.3))
    assert not np.any(tr.phi) and not np.any(tr.w) and not np.any(tr.v)
    np.testing.assert_allclose(tr.mu, p.params.a, atol=1e-14)


def test_constant_data_follows_scalar_recurrence():
    p = make_problem(nt=25, T=2.0, phi0=-0.3, f=0.05, params=PhysParams(gamma=0.7))
    tr = solve_state(p, p.zero_control(), LogQuench(0.2))
    dt, gam = p.timegrid.dt, p.params.gamma
    m = [-0.3]
    for _ in range(p.timegrid.nt):
        m.append((m[-1] + dt * 0.05) / (1 + gam * dt))
    for n in range(p.timegrid.nt + 1):
        assert np.ptp(tr.phi[n]) <= 1e-14
        assert tr.phi[n].mean() == pytest.approx(m[n], abs=1e-12)


def test_mean_decay_closed_form():
    p = make_problem(nt=40, T=1.0, phi0=0.5, params=PhysParams(gamma=1.0))
    tr = solve_state(p, p.zero_control(), LogQuench(0.5))
    dt = p.timegrid.dt
    expected = 0.5 / (1 + dt) ** np.arange(41)
    np.testing.assert_allclose(tr.means, expected, atol=1e-12)
    assert abs(tr.means[-1] - 0.5 * np.exp(-1.0)) < 5 * dt * 0.5


def test_mass_balance_on_nonuniform_run():
    p = make_problem(nx=16, nt=20, T=1.0, L=4.0, c2=1.0)
    rng = np.random.default_rng(0)
    p.data.phi0[:] = 0.6 * np.tanh(rng.normal(size=p.grid.shape))
    p.data.f[:] = 0.02 * rng.normal(size=p.data.f.shape)
    u = np.clip(rng.normal(size=p.control_shape), -1, 1)
    tr = solve_state(p, u, LogQuench(0.1))
    assert np.max(np.abs(mass_balance_residuals(tr))) <= 1e-12
    lo, hi = separation_report(tr)
    assert -1 < lo <= hi < 1


def test_initial_conditions_are_reproduced():
    p = make_problem(nx=6, nt=3, phi0=0.2)
    p.data.w0[:] = 0.4
    p.data.w1[:] = -0.1
    tr = solve_state(p, p.zero_control(), LogQuench(0.5))
    assert np.all(tr.phi[0] == 0.2) and np.all(tr.w[0] == 0.4) and np.all(tr.v[0] == -0.1)


def test_prior_state_outside_interval_is_trapped():
    p = make_problem(nx=4, nt=1)
    bad = StepState(np.full(p.grid.shape, 1.0), *(np.zeros(p.grid.shape),) * 3)
    with pytest.raises(SeparationLoss):
        step(p, bad, np.zeros(p.grid.shape), np.zeros(p.grid.shape), LogQuench(0.5))


def test_obstacle_mode_reports_penalty_multiplier():
    p = make_problem(nx=12, nt=10, T=1.0, L=4.0, c2=1.0)
    X, Y = p.grid.centers
    p.data.phi0[:] = 0.95 * np.tanh(4 * (X - 2.0))
    mode = ObstaclePenalty(eps=1e-3, eps_schedule=(1e-2,))
    tr = solve_state(p, p.zero_control(), mode)
    assert tr.eps_final == 1e-3
    np.testing.assert_allclose(tr.xi[1:], np.stack([mode.derivs(x)[0] for x in tr.phi[1:]]))
    assert np.max(np.abs(mass_balance_residuals(tr))) <= 1e-12


def test_snapshots_round_trip(tmp_path):
    p = make_problem(nx=4, nt=4, phi0=0.1)
    w = SnapshotWriter(tmp_path, p.grid, stride=2)
    tr = solve_state(p, p.zero_control(), LogQuench(0.5), snapshots=w)
    names = sorted(x.name for x in tmp_path.glob("*.bin"))
    assert names == sorted(f"{f}_{n:06d}.bin" for f in ("mu", "phi", "v", "w") for n in (0, 2, 4))
    arr, hdr = read_snapshot(tmp_path / "phi_000004.bin")
    np.testing.assert_array_equal(arr, tr.phi[4])
    assert hdr == {"nx": 4, "ny": 4, "lx": 1.0, "ly": 1.0, "t": 1.0, "field": "phi"}


# ---- dense Newton oracle ---------------------------------------------------------


def dense_step(p, alpha, phi, w, v, u, f):
    """One time step by Newton on the full (phi, mu) system with dense matrices."""
    K = neumann_matrix(p.grid).toarray()
    par, dt, n = p.params, p.timegrid.dt, phi.size
    phin, wn, vn = phi.ravel(), w.ravel(), v.ravel()
    Fp = p.concave.prime(phin)
    x = np.concatenate([phin, np.zeros(n)])
    for _ in range(60):
        ph, mu = x[:n], x[n:]
        R = np.concatenate(
            [
                (ph - phin) / dt + K @ mu + par.gamma * ph - f.ravel(),
                mu - (K @ ph + alpha * h_prime(ph) + Fp + par.a - par.b * vn),
            ]
        )
        if np.max(np.abs(R)) < 1e-13:
            break
        J = np.block(
            [
                [(1 / dt + par.gamma) * np.eye(n), K],
                [-K - np.diag(alpha * h_second(ph)), np.eye(n)],
            ]
        )
        x = x - np.linalg.solve(J, R)
    ph, mu = x[:n], x[n:]
    A = np.eye(n) / dt + (par.kappa1 + dt * par.kappa2) * K
    rhs = vn / dt - par.kappa2 * K @ wn - par.lam * (ph - phin) / dt + u.ravel()
    vv = np.linalg.solve(A, rhs)
    shape = phi.shape
    return ph.reshape(shape), mu.reshape(shape), (wn + dt * vv).reshape(shape), vv.reshape(shape)


def test_one_step_matches_dense_newton():
    params = PhysParams(gamma=0.8, a=0.3, b=0.7, kappa1=1.3, kappa2=0.6, lam=0.9)
    p = make_problem(nx=4, nt=1, T=0.05, params=params, L=1.0, c2=0.8)
    rng = np.random.default_rng(42)
    phi = 0.7 * np.tanh(rng.normal(size=(4, 4)))
    w, v = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    u, f = rng.uniform(-1, 1, size=(4, 4)), 0.2 * rng.normal(size=(4, 4))
    alpha = 0.3
    got = step(p, StepState(phi, np.zeros_like(phi), w, v), u, f, LogQuench(alpha))
    ref = dense_step(p, alpha, phi, w, v, u, f)
    for a, b in zip((got.phi, got.mu, got.w, got.v), ref):
        np.testing.assert_allclose(a, b, atol=1e-10)


# ---- manufactured solution ---------------------------------------------------------


def manufactured(time_dependent):
    x, y, t = sp.symbols("x y t")
    par = PhysParams(gamma=0.5, a=0.4, b=0.6, kappa1=1.0, kappa2=0.5, lam=0.8)
    alpha, c2 = 0.3, 0.5
    cx, cy = sp.cos(sp.pi * x), sp.cos(sp.pi * y)
    if time_dependent:
        phi = 0.2 + 0.4 * cx * cy * sp.exp(-t)
        w = sp.cos(2 * sp.pi * x) * cy * sp.sin(2 * t)
    else:
        phi = 0.2 + 0.4 * cx * cy
        w = sp.cos(2 * sp.pi * x) * cy * (0.5 + t)

    def lap(e):
        return sp.diff(e, x, 2) + sp.diff(e, y, 2)

    hprime = sp.log(1 + phi) - sp.log(1 - phi)
    mu = -lap(phi) + alpha * hprime - 2 * c2 * phi + par.a - par.b * sp.diff(w, t)
    f = sp.diff(phi, t) - lap(mu) + par.gamma * phi
    u = sp.diff(w, t, 2) - lap(par.kappa1 * sp.diff(w, t) + par.kappa2 * w) + par.lam * sp.diff(phi, t)
    fns = {k: sp.lambdify((x, y, t), e, "numpy") for k, e in
           {"phi": phi, "w": w, "v": sp.diff(w, t), "f": f, "u": u}.items()}
    return par, alpha, c2, fns


def run_manufactured(nx, nt, T, setup):
    par, alpha, c2, fn = setup
    grid = Grid(nx, nx, 1.0, 1.0)
    tg = TimeGrid(T, nt)
    X, Y = grid.centers

    def ev(name, t):
        return np.broadcast_to(fn[name](X, Y, t), grid.shape).astype(float)

    f = np.stack([ev("f", t) for t in tg.times])
    u = np.stack([ev("u", t) for t in tg.times])
    data = ProblemData(f, ev("phi", 0.0), ev("w", 0.0), ev("v", 0.0))
    prob = Problem(grid, tg, par, data, ConcavePart(0.0, c2), ControlBox(-np.inf, np.inf))
    tr = solve_state(prob, u, LogQuench(alpha), validate=False)
    e_phi = np.max(np.abs(tr.phi[-1] - ev("phi", T)))
    e_w = np.max(np.abs(tr.w[-1] - ev("w", T)))
    return e_phi, e_w


def observed_slopes(sizes, errors):
    return np.polyfit(np.log(sizes), np.log(errors), 1)[0]


def test_first_order_in_time():
    setup = manufactured(time_dependent=True)
    nts = [8, 16, 32]
    errs = np.array([run_manufactured(48, nt, 0.5, setup) for nt in nts])
    dts = [0.5 / n for n in nts]
    assert observed_slopes(dts, errs[:, 0]) == pytest.approx(1.0, abs=0.25)
    assert observed_slopes(dts, errs[:, 1]) == pytest.approx(1.0, abs=0.25)


def test_second_order_in_space():
    # constant-in-time phi and linear-in-time w are integrated exactly in time
    setup = manufactured(time_dependent=False)
    nxs = [8, 16, 32]
    errs = np.array([run_manufactured(nx, 4, 0.5, setup) for nx in nxs])
    hs = [1.0 / n for n in nxs]
    assert observed_slopes(hs, errs[:, 0]) == pytest.approx(2.0, abs=0.25)
    assert observed_slopes(hs, errs[:, 1]) == pytest.approx(2.0, abs=0.25)
