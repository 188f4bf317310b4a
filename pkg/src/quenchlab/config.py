"""JSON run configuration: defaults, analytic profiles and validation.

A configuration is a JSON object with the sections below; every key is
optional except ``grid`` and ``time.T``.

``grid``       ``nx``, ``ny``, ``lx``, ``ly``
``time``       ``T``, ``nt``
``phys``       ``gamma``, ``a``, ``b``, ``kappa1``, ``kappa2``, ``lambda``
``potential``  ``c1``, ``c2``, ``mode`` (``"log"`` or ``"obstacle"``),
               ``alpha``, ``eps``, ``eps_schedule``
``data``       ``phi0``, ``w0``, ``w1``, ``f`` (profiles)
``control``    ``u_min``, ``u_max`` (numbers), ``u0`` (profile)
``cost``       ``beta1`` ... ``beta6``, ``nu`` and the six targets (profiles)
``optimizer``  fields of :class:`quenchlab.control.OptimizerConfig`
``schedule``   ``alphas`` (list) or ``alpha0`` with ``levels``
``study``      ``rate``, ``control``, ``obstacle`` (booleans)
``gradcheck``  ``n_dirs``, ``tau``, ``tol``
``output``     ``snapshot_stride``
``seed``       integer used by every random draw

A profile is a number (constant field), a snapshot path string, or an object
``{"profile": name, ...}`` with ``name`` one of ``constant``,
``cosine-bump``, ``tanh-interface``, ``checkerboard`` (see
:func:`evaluate_profile`). Time-indexed fields (``f``, ``u0`` and the ``*_Q``
targets) are constant in time.
"""

import copy
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import CostError, CostSpec
from .control import OptimizerConfig
from .grid import Grid, TimeGrid
from .io import SnapshotFormatError, read_snapshot, write_json
from .potentials import ConcavePart, LogQuench, ObstaclePenalty
from .quench import QuenchSchedule
from .state import ControlBox, PhysParams, Problem, ProblemData, validate_assumptions

ECHO_NAME = "resolved_config.json"


class ConfigError(ValueError):
    """Base class of configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    """Malformed JSON or a bad field; carries ``line`` and ``field``."""

    def __init__(self, message, line=None, field=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    """Assumption violations; ``codes`` lists the violated conditions."""

    def __init__(self, violations):
        self.violations = list(violations)
        self.codes = sorted({code for code, _ in self.violations})
        text = "; ".join(f"[{code}] {msg}" for code, msg in self.violations)
        super().__init__(f"configuration violates assumptions: {text}")


DEFAULTS = {
    "grid": {"nx": None, "ny": None, "lx": 1.0, "ly": 1.0},
    "time": {"T": None, "nt": 100},
    "phys": {"gamma": 1.0, "a": 0.5, "b": 0.5, "kappa1": 1.0, "kappa2": 1.0, "lambda": 1.0},
    "potential": {
        "c1": 0.0,
        "c2": 1.0,
        "mode": "log",
        "alpha": 0.1,
        "eps": 1e-4,
        "eps_schedule": [1e-2, 1e-3],
    },
    "data": {"phi0": 0.0, "w0": 0.0, "w1": 0.0, "f": 0.0},
    "control": {"u_min": -1.0, "u_max": 1.0, "u0": 0.0},
    "cost": {
        "beta1": 1.0,
        "beta2": 0.0,
        "beta3": 0.0,
        "beta4": 0.0,
        "beta5": 0.0,
        "beta6": 0.0,
        "nu": 0.1,
        "phi_Q": 0.0,
        "w_Q": 0.0,
        "wprime_Q": 0.0,
        "phi_Omega": 0.0,
        "w_Omega": 0.0,
        "wprime_Omega": 0.0,
    },
    "optimizer": {
        "max_iters": 500,
        "step0": 1.0,
        "armijo_c": 1e-4,
        "shrink": 0.5,
        "stat_tol": 1e-6,
        "min_step": 1e-10,
        "max_backtracks": 12,
    },
    "schedule": {"alphas": None, "alpha0": 0.1, "levels": 4},
    "study": {"rate": True, "control": True, "obstacle": True},
    "gradcheck": {"n_dirs": 5, "tau": 1e-4, "tol": 1e-2},
    "output": {"snapshot_stride": 0},
    "seed": 0,
}

PROFILE_FIELDS = {
    ("data", "phi0"),
    ("data", "w0"),
    ("data", "w1"),
    ("data", "f"),
    ("control", "u0"),
    ("cost", "phi_Q"),
    ("cost", "w_Q"),
    ("cost", "wprime_Q"),
    ("cost", "phi_Omega"),
    ("cost", "w_Omega"),
    ("cost", "wprime_Omega"),
}

PROFILE_KEYS = {
    "constant": {"value"},
    "cosine-bump": {"amplitude", "center", "radius", "offset"},
    "tanh-interface": {"amplitude", "center", "radius", "width", "offset"},
    "checkerboard": {"amplitude", "kx", "ky", "offset"},
}

_INT_FIELDS = {
    "grid.nx",
    "grid.ny",
    "time.nt",
    "optimizer.max_iters",
    "optimizer.max_backtracks",
    "schedule.levels",
    "gradcheck.n_dirs",
    "output.snapshot_stride",
    "seed",
}


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------


def evaluate_profile(spec, grid, base_dir=None, name="profile"):
    """Spatial field of ``grid`` described by ``spec``.

    * number: constant field
    * string: path of a snapshot (``.bin`` with ``.hdr``), relative to ``base_dir``
    * ``{"profile": "constant", "value": c}``
    * ``{"profile": "cosine-bump", "amplitude", "center", "radius", "offset"}``:
      ``offset + amplitude (1 + cos(π d/radius))/2`` for ``d < radius``, with
      ``d`` the distance to ``center``
    * ``{"profile": "tanh-interface", "amplitude", "center", "radius", "width",
      "offset"}``: ``offset + amplitude tanh((d - radius)/width)``
    * ``{"profile": "checkerboard", "amplitude", "kx", "ky", "offset"}``:
      ``offset + amplitude cos(kx π x/lx) cos(ky π y/ly)``
    """
    X, Y = grid.centers
    if isinstance(spec, bool):
        raise ParseError("expected a number, path or profile object", field=name)
    if isinstance(spec, (int, float)):
        return np.full(grid.shape, float(spec))
    if isinstance(spec, str):
        path = Path(spec)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            arr, hdr = read_snapshot(path)
        except (OSError, SnapshotFormatError) as exc:
            raise ParseError(f"cannot read snapshot: {exc}", field=name) from exc
        if arr.shape != grid.shape:
            raise ParseError(f"snapshot shape {arr.shape} differs from grid {grid.shape}", field=name)
        return arr
    if not isinstance(spec, dict) or "profile" not in spec:
        raise ParseError("expected a number, path or profile object", field=name)
    kind = spec["profile"]
    if kind not in PROFILE_KEYS:
        raise ParseError(f"unknown profile '{kind}'", field=f"{name}.profile")
    extra = set(spec) - PROFILE_KEYS[kind] - {"profile"}
    if extra:
        raise ParseError(f"unknown keys {sorted(extra)} for profile '{kind}'", field=name)

    def num(key, default):
        val = spec.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError("expected a number", field=f"{name}.{key}")
        return float(val)

    def center():
        c = spec.get("center", [grid.lx / 2.0, grid.ly / 2.0])
        if not (isinstance(c, list) and len(c) == 2 and all(isinstance(x, (int, float)) for x in c)):
            raise ParseError("expected [x, y]", field=f"{name}.center")
        return float(c[0]), float(c[1])

    if kind == "constant":
        return np.full(grid.shape, num("value", 0.0))
    offset = num("offset", 0.0)
    amp = num("amplitude", 1.0)
    if kind == "checkerboard":
        kx, ky = num("kx", 1.0), num("ky", 1.0)
        return offset + amp * np.cos(kx * math.pi * X / grid.lx) * np.cos(ky * math.pi * Y / grid.ly)
    cx, cy = center()
    d = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2)
    radius = num("radius", min(grid.lx, grid.ly) / 4.0)
    if not radius > 0:
        raise ParseError("radius must be positive", field=f"{name}.radius")
    if kind == "cosine-bump":
        bump = np.where(d < radius, 0.5 * (1.0 + np.cos(math.pi * np.minimum(d / radius, 1.0))), 0.0)
        return offset + amp * bump
    width = num("width", 1.0)
    if not width > 0:
        raise ParseError("width must be positive", field=f"{name}.width")
    return offset + amp * np.tanh((d - radius) / width)


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _merge(defaults, user, text, prefix=""):
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ParseError("unknown key", line=_line_of(text, key), field=path)
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ParseError("expected an object", line=_line_of(text, key), field=path)
            out[key] = _merge(defaults[key], val, text, prefix=path + ".")
        else:
            out[key] = val
    return out


def _check_types(cfg, text):
    def bad(path, msg):
        raise ParseError(msg, line=_line_of(text, path.rsplit(".", 1)[-1]), field=path)

    for section, body in cfg.items():
        items = body.items() if isinstance(body, dict) else [(None, body)]
        for key, val in items:
            path = section if key is None else f"{section}.{key}"
            if (section, key) in PROFILE_FIELDS:
                continue
            if path in ("potential.mode",):
                if val not in ("log", "obstacle"):
                    bad(path, "expected 'log' or 'obstacle'")
            elif path in ("potential.eps_schedule",):
                if not isinstance(val, list) or not all(_is_num(x) for x in val):
                    bad(path, "expected a list of numbers")
            elif path == "schedule.alphas":
                if val is not None and (not isinstance(val, list) or not all(_is_num(x) for x in val)):
                    bad(path, "expected a list of numbers")
            elif section == "study":
                if not isinstance(val, bool):
                    bad(path, "expected true or false")
            elif path in _INT_FIELDS:
                if val is None and path in ("grid.nx", "grid.ny"):
                    continue
                if isinstance(val, bool) or not isinstance(val, int):
                    bad(path, "expected an integer")
            elif val is None and path == "time.T":
                continue
            elif not _is_num(val):
                bad(path, "expected a number")


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass
class RunConfig:
    """Resolved configuration with builders for the solver objects."""

    raw: dict
    base_dir: Path

    def section(self, name):
        return self.raw[name]

    @property
    def seed(self):
        return int(self.raw["seed"])

    def grid(self):
        s = self.raw["grid"]
        return Grid(int(s["nx"]), int(s["ny"]), float(s["lx"]), float(s["ly"]))

    def timegrid(self):
        s = self.raw["time"]
        return TimeGrid(float(s["T"]), int(s["nt"]))

    def params(self):
        s = self.raw["phys"]
        return PhysParams(s["gamma"], s["a"], s["b"], s["kappa1"], s["kappa2"], s["lambda"])

    def field(self, section, key, grid):
        return evaluate_profile(self.raw[section][key], grid, self.base_dir, f"{section}.{key}")

    def time_field(self, section, key, grid, tg):
        sp = self.field(section, key, grid)
        return np.broadcast_to(sp, (tg.nt + 1,) + grid.shape).copy()

    def problem(self):
        grid, tg = self.grid(), self.timegrid()
        data = ProblemData(
            f=self.time_field("data", "f", grid, tg),
            phi0=self.field("data", "phi0", grid),
            w0=self.field("data", "w0", grid),
            w1=self.field("data", "w1", grid),
        )
        c = self.raw["control"]
        pot = self.raw["potential"]
        return Problem(
            grid,
            tg,
            self.params(),
            data,
            ConcavePart(pot["c1"], pot["c2"]),
            ControlBox(float(c["u_min"]), float(c["u_max"])),
        )

    def initial_control(self, problem):
        return self.time_field("control", "u0", problem.grid, problem.timegrid)

    def mode(self, alpha=None):
        pot = self.raw["potential"]
        if pot["mode"] == "obstacle" and alpha is None:
            return ObstaclePenalty(
                eps=float(pot["eps"]), alpha=0.0, eps_schedule=tuple(pot["eps_schedule"])
            )
        return LogQuench(float(pot["alpha"] if alpha is None else alpha))

    def obstacle(self):
        pot = self.raw["potential"]
        return ObstaclePenalty(eps=float(pot["eps"]), alpha=0.0, eps_schedule=tuple(pot["eps_schedule"]))

    def cost(self, problem):
        s = self.raw["cost"]
        grid, tg = problem.grid, problem.timegrid
        kw = {k: float(s[k]) for k in ("beta1", "beta2", "beta3", "beta4", "beta5", "beta6", "nu")}
        for key in ("phi_Q", "w_Q", "wprime_Q"):
            kw[key] = self.time_field("cost", key, grid, tg)
        for key in ("phi_Omega", "w_Omega", "wprime_Omega"):
            kw[key] = self.field("cost", key, grid)
        return CostSpec(**kw)

    def optimizer(self, anchor=None):
        return OptimizerConfig(**self.raw["optimizer"], anchor=anchor)

    def schedule(self):
        s = self.raw["schedule"]
        if s["alphas"] is not None:
            return QuenchSchedule(tuple(s["alphas"]))
        return QuenchSchedule.geometric(float(s["alpha0"]), int(s["levels"]))

    def echo(self, out_dir):
        """Write the resolved configuration into ``out_dir``."""
        return write_json(Path(out_dir) / ECHO_NAME, self.raw)


def _validate(cfg):
    """Build every object once and collect assumption violations."""
    out = []
    try:
        problem = cfg.problem()
    except ParseError:
        raise
    except ValueError as exc:
        msg = str(exc)
        code = "A2" if "c2" in msg else "grid"
        return [(code, msg)]
    report = validate_assumptions(problem.params, problem.data, problem.box)
    out.extend((v.code, v.message) for v in report.violations)
    try:
        cfg.cost(problem)
    except CostError as exc:
        out.append(("A5", str(exc)))
    try:
        cfg.optimizer()
    except ValueError as exc:
        out.append(("optimizer", str(exc)))
    try:
        cfg.schedule()
        cfg.mode()
    except ValueError as exc:
        out.append(("A2", str(exc)))
    return out


def load_config(path, out_dir=None):
    """Read, default, type-check and validate a JSON configuration.

    Raises :class:`ParseError` for syntax, unknown keys and bad types and
    :class:`ValidationError` listing violated assumptions. With ``out_dir``
    the resolved configuration is echoed there.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from exc
    return parse_config(text, base_dir=path.parent, out_dir=out_dir)


def parse_config(text, base_dir=".", out_dir=None):
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(user, dict):
        raise ParseError("top level must be an object", line=1)
    raw = _merge(DEFAULTS, user, text)
    g_ = raw["grid"]
    if g_["nx"] is None:
        raise ParseError("missing required key", field="grid.nx")
    if g_["ny"] is None:
        g_["ny"] = g_["nx"]
    if raw["time"]["T"] is None:
        raise ParseError("missing required key", field="time.T")
    _check_types(raw, text)
    cfg = RunConfig(raw, Path(base_dir))
    violations = _validate(cfg)
    if violations:
        raise ValidationError(violations)
    if out_dir is not None:
        cfg.echo(out_dir)
    return cfg


__all__ = [
    "DEFAULTS",
    "ECHO_NAME",
    "ConfigError",
    "ParseError",
    "RunConfig",
    "ValidationError",
    "evaluate_profile",
    "load_config",
    "parse_config",
]
