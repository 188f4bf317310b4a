"""``quenchctl``: command-line driver.

Usage::

    quenchctl <simulate|optimize|quench-study|gradcheck|validate>
              --config <path> [--out <dir>] [--threads <n>]

Exit codes: 0 when every hard check passes, 1 when one fails, 2 for
configuration errors. Every output directory receives the resolved
configuration echo and a ``summary.json``; the CSV column sets are listed in
:data:`CSV_COLUMNS`.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .adjoint import solve_adjoint
from .config import ConfigError, ValidationError, load_config
from .control import (
    HISTORY_FIELDS,
    clamp_residual,
    gradient_check,
    optimize,
    reduced_gradient,
    variational_samples,
    write_history,
)
from .potentials import LogQuench
from .quench import control_continuation, state_rate_study
from .state import (
    StateSolveError,
    mass_balance_residuals,
    separation_report,
    solve_state,
    validate_assumptions,
)

log = logging.getLogger("quenchctl")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

MASS_TOL = 1e-12
SLOPE_RANGE = (0.45, 1.6)
SLOPE_RESIDUAL = 0.15
GAP_FRACTION = 0.10

CSV_COLUMNS = {
    "diagnostics.csv": (
        "step",
        "t",
        "mean_phi",
        "min_phi",
        "max_phi",
        "mean_w",
        "mean_v",
        "mass_residual",
        "newton_iters",
        "linear_iters",
    ),
    "history.csv": HISTORY_FIELDS,
    "gradcheck.csv": ("direction", "adjoint", "finite_difference", "relative_error"),
    "rate.csv": ("alpha_i", "alpha_j", "dalpha", "phi_error", "w_error", "inactive"),
    "separation.csv": ("alpha", "r_low", "r_high", "margin"),
    "obstacle.csv": ("alpha", "eps", "phi_error", "w_error"),
    "continuation.csv": (
        "alpha",
        "status",
        "distance",
        "adapted_cost",
        "cost",
        "gap",
        "stationarity",
        "iterations",
    ),
    "control_distances.csv": ("alpha_i", "alpha_j", "distance"),
}


def _check(name, passed, **values):
    return {"name": name, "pass": bool(passed), **values}


def _finish(out, summary):
    summary["pass"] = all(c["pass"] for c in summary["checks"])
    io.write_json(out / "summary.json", summary)
    for c in summary["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    return EXIT_PASS if summary["pass"] else EXIT_FAIL


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_validate(cfg, out, threads):
    problem = cfg.problem()
    rep = validate_assumptions(problem.params, problem.data, problem.box)
    io.write_json(out / "validation.json", rep.as_dict())
    checks = [_check("assumptions", rep.ok, margin=rep.margin, rho=rep.rho)]
    return _finish(out, {"command": "validate", "checks": checks})


def cmd_simulate(cfg, out, threads):
    problem = cfg.problem()
    mode = cfg.mode()
    tg = problem.timegrid
    stride = int(cfg.section("output")["snapshot_stride"])
    snaps = io.SnapshotWriter(out / "snapshots", problem.grid, stride, final_step=tg.nt)
    traj = solve_state(problem, cfg.initial_control(problem), mode, snapshots=snaps)
    diag = traj.diagnostics()
    mass = np.concatenate([[0.0], mass_balance_residuals(traj)])
    diag["mass_residual"] = mass
    rows = io.columns_to_rows({k: diag[k] for k in CSV_COLUMNS["diagnostics.csv"]})
    io.write_csv(out / "diagnostics.csv", CSV_COLUMNS["diagnostics.csv"], rows)
    lo, hi = separation_report(traj)
    checks = [_check("mass_balance", float(np.max(np.abs(mass))) <= MASS_TOL, max_residual=float(np.max(np.abs(mass))))]
    if isinstance(mode, LogQuench):
        checks.append(_check("separation", max(abs(lo), abs(hi)) < 1.0, r_low=lo, r_high=hi, margin=1.0 - max(abs(lo), abs(hi))))
    summary = {"command": "simulate", "mode": repr(mode), "checks": checks, "snapshots": len(snaps.written)}
    return _finish(out, summary)


def cmd_optimize(cfg, out, threads):
    problem = cfg.problem()
    mode = cfg.mode()
    cost = cfg.cost(problem)
    ocfg = cfg.optimizer()
    res = optimize(problem, cost, ocfg, mode, u0=cfg.initial_control(problem))
    write_history(res.history, out / "history.csv")
    stride = int(cfg.section("output")["snapshot_stride"])
    if stride > 0:
        snaps = io.SnapshotWriter(out / "snapshots", problem.grid, stride, final_step=problem.timegrid.nt)
        for n, t in enumerate(problem.timegrid.times):
            snaps.maybe_write(n, t, u=res.u[n])
    grad = reduced_gradient(res.adjoint, res.u, cost, problem.timegrid)
    checks = [_check("converged", res.converged, stationarity=res.stationarity, stat_tol=ocfg.stat_tol)]
    unorm = float(np.max(np.abs(res.u)))
    if cost.nu > 0:
        clamp = clamp_residual(res.u, res.adjoint, cost, problem)
        bound = 10.0 * ocfg.stat_tol * (1.0 + unorm)
        checks.append(_check("clamp_identity", clamp <= bound, residual=clamp, bound=bound))
    samples = variational_samples(problem, res.u, grad, n_samples=20, seed=cfg.seed)
    worst = min(v / s for v, s in samples if s > 0) if any(s > 0 for _, s in samples) else 0.0
    checks.append(_check("variational_inequality", worst >= -10.0 * ocfg.stat_tol, worst_scaled=worst))
    summary = {
        "command": "optimize",
        "checks": checks,
        "cost": res.cost,
        "iterations": len(res.history) - 1,
        "forward_solves": res.forward_solves,
        "backward_solves": res.backward_solves,
        "notes": res.notes,
        "bang_bang_fraction": _bang_bang(problem, res.u),
    }
    return _finish(out, summary)


def _bang_bang(problem, u):
    lo = problem.box.lower(u.shape)
    hi = problem.box.upper(u.shape)
    return float(np.mean((u == lo) | (u == hi)))


def cmd_gradcheck(cfg, out, threads):
    problem = cfg.problem()
    mode = cfg.mode()
    cost = cfg.cost(problem)
    gc = cfg.section("gradcheck")
    rep = gradient_check(
        problem,
        cost,
        mode,
        u=cfg.initial_control(problem),
        n_dirs=int(gc["n_dirs"]),
        tau=float(gc["tau"]),
        seed=cfg.seed,
        workers=threads,
    )
    rows = [
        {"direction": i, "adjoint": a, "finite_difference": f, "relative_error": e}
        for i, (a, f, e) in enumerate(zip(rep.adjoint, rep.finite_difference, rep.relative_errors))
    ]
    io.write_csv(out / "gradcheck.csv", CSV_COLUMNS["gradcheck.csv"], rows)
    tol = float(gc["tol"])
    checks = [_check("gradient", rep.max_relative_error <= tol, max_relative_error=rep.max_relative_error, tol=tol)]
    return _finish(out, {"command": "gradcheck", "checks": checks, "tau": rep.tau})


def cmd_quench_study(cfg, out, threads):
    problem = cfg.problem()
    sched = cfg.schedule()
    study = cfg.section("study")
    checks = []
    summary = {"command": "quench-study", "alphas": list(sched.alphas)}
    u = cfg.initial_control(problem)
    if study["rate"]:
        rep = state_rate_study(
            problem, u, sched, obstacle=cfg.obstacle(), with_obstacle=study["obstacle"], workers=threads
        )
        io.write_csv(
            out / "rate.csv",
            CSV_COLUMNS["rate.csv"],
            [
                {
                    "alpha_i": p.alpha_i,
                    "alpha_j": p.alpha_j,
                    "dalpha": p.alpha_i - p.alpha_j,
                    "phi_error": p.phi_error,
                    "w_error": p.w_error,
                    "inactive": p.inactive,
                }
                for p in rep.pairs
            ],
        )
        io.write_csv(
            out / "separation.csv",
            CSV_COLUMNS["separation.csv"],
            [
                {"alpha": a, "r_low": lo, "r_high": hi, "margin": rep.margins[a]}
                for a, (lo, hi) in rep.extremes.items()
            ],
        )
        if study["obstacle"]:
            io.write_csv(
                out / "obstacle.csv",
                CSV_COLUMNS["obstacle.csv"],
                [
                    {"alpha": a, "eps": rep.obstacle_eps, "phi_error": e[0], "w_error": e[1]}
                    for a, e in rep.obstacle_errors.items()
                ],
            )
        summary["rate"] = rep.as_dict()
        checks.append(_check("separation", all(m > 0 for m in rep.margins.values()), min_margin=min(rep.margins.values())))
        ok = (
            len(rep.fitted_pairs) >= 2
            and SLOPE_RANGE[0] <= rep.slope <= SLOPE_RANGE[1]
            and rep.residual <= SLOPE_RESIDUAL
        )
        checks.append(_check("rate_slope", ok, slope=rep.slope, residual=rep.residual))
    if study["control"]:
        cost = cfg.cost(problem)
        cont = control_continuation(problem, cost, sched, config=cfg.optimizer())
        io.write_csv(
            out / "continuation.csv",
            CSV_COLUMNS["continuation.csv"],
            [{k: getattr(e, k) for k in CSV_COLUMNS["continuation.csv"]} for e in cont.entries],
        )
        io.write_csv(
            out / "control_distances.csv",
            CSV_COLUMNS["control_distances.csv"],
            [{"alpha_i": a, "alpha_j": b, "distance": d} for a, b, d in cont.rate.control_distances],
        )
        ok_entries = [e for e in cont.entries if e.status != "failed"]
        summary["continuation"] = {
            "anchor_source": cont.anchor_source,
            "anchor_cost": cont.anchor_cost,
            "failures": [e.alpha for e in cont.entries if e.status == "failed"],
        }
        if len(ok_entries) >= 2:
            first, last = ok_entries[0], ok_entries[-1]
            checks.append(_check("control_distance", last.distance <= first.distance, initial=first.distance, final=last.distance))
            checks.append(
                _check("cost_gap", last.gap <= GAP_FRACTION * first.gap, initial=first.gap, final=last.gap)
            )
        else:
            checks.append(_check("control_distance", False, message="fewer than two successful alphas"))
    summary["checks"] = checks
    return _finish(out, summary)


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "quench-study": cmd_quench_study,
    "gradcheck": cmd_gradcheck,
    "validate": cmd_validate,
}


def _threads(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("QUENCHCTL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"QUENCHCTL_THREADS must be an integer, got {env!r}")
    return 1


def build_parser():
    ap = argparse.ArgumentParser(prog="quenchctl", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", default=None, help="output directory (default: ./out/<command>)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (env QUENCHCTL_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.out) if args.out else Path("out") / args.command
    out.mkdir(parents=True, exist_ok=True)
    try:
        threads = _threads(args.threads)
        cfg = load_config(args.config, out_dir=out)
        return COMMANDS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        report = {"command": args.command, "pass": False, "error": str(exc), "checks": []}
        if isinstance(exc, ValidationError):
            report["violations"] = [{"code": c, "message": m} for c, m in exc.violations]
        io.write_json(out / "summary.json", report)
        return EXIT_CONFIG
    except (StateSolveError, ArithmeticError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        io.write_json(out / "summary.json", {"command": args.command, "pass": False, "error": str(exc), "checks": []})
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
