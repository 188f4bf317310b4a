"""Snapshots, CSV/JSON writers, configuration loading and the ``quenchctl`` CLI."""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from quenchlab import cli, io
from quenchlab.config import (
    DEFAULTS,
    ECHO_NAME,
    ParseError,
    ValidationError,
    evaluate_profile,
    load_config,
    parse_config,
)
from quenchlab.grid import Grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = CONFIGS / "smoke.json"


def write_config(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj, indent=2))
    return path


def smoke_variant(tmp_path, **sections):
    cfg = json.loads(SMOKE.read_text())
    for key, val in sections.items():
        cfg[key] = {**cfg.get(key, {}), **val} if isinstance(val, dict) else val
    return write_config(tmp_path, cfg)


# ---- snapshots and writers ---------------------------------------------------------


def test_snapshot_round_trip_is_exact(tmp_path):
    grid = Grid(5, 3, 2.0, 1.5)
    field = np.random.default_rng(0).normal(size=grid.shape)
    path = io.write_snapshot(tmp_path / "phi_000007.bin", field, grid, 0.1 + 0.2, "phi")
    arr, hdr = io.read_snapshot(path)
    np.testing.assert_array_equal(arr, field)
    assert hdr["t"] == 0.1 + 0.2 and hdr["field"] == "phi"
    assert path.stat().st_size == 8 * 15
    assert (tmp_path / "phi_000007.hdr").read_text().splitlines()[0] == "nx = 5"


def test_snapshot_format_errors(tmp_path):
    grid = Grid(4, 4)
    with pytest.raises(io.SnapshotFormatError):
        io.write_snapshot(tmp_path / "x.bin", np.zeros((3, 4)), grid, 0.0, "x")
    path = io.write_snapshot(tmp_path / "x.bin", np.zeros((4, 4)), grid, 0.0, "x")
    path.with_suffix(".hdr").write_text("nx = 4\nny = 5\nlx = 1.0\nly = 1.0\nt = 0.0\nfield = x\n")
    with pytest.raises(io.SnapshotFormatError):
        io.read_snapshot(path)
    path.with_suffix(".hdr").unlink()
    with pytest.raises(io.SnapshotFormatError):
        io.read_snapshot(path)


def test_snapshot_writer_stride(tmp_path):
    grid = Grid(2, 2)
    w = io.SnapshotWriter(tmp_path, grid, stride=3, final_step=7)
    for n in range(8):
        w.maybe_write(n, 0.1 * n, a=np.full(grid.shape, n))
    assert [p.name for p in w.written] == ["a_000000.bin", "a_000003.bin", "a_000006.bin", "a_000007.bin"]
    off = io.SnapshotWriter(tmp_path / "off", grid, stride=0, final_step=7)
    off.maybe_write(7, 0.7, a=np.zeros(grid.shape))
    assert off.written == [] and not (tmp_path / "off").exists()


def test_csv_uses_repr_floats_and_unix_newlines(tmp_path):
    path = io.write_csv(tmp_path / "t.csv", ("a", "b", "c"), [{"a": 0.1 + 0.2, "b": True, "c": np.int64(3)}])
    assert path.read_bytes() == b"a,b,c\n0.30000000000000004,true,3\n"
    rows = io.columns_to_rows({"x": np.array([1.5, 2.5]), "y": [1, 2]})
    assert rows == [{"x": 1.5, "y": 1}, {"x": 2.5, "y": 2}]


def test_json_writer_handles_numpy_and_nan(tmp_path):
    io.write_json(tmp_path / "s.json", {"b": np.float64(1.5), "a": [np.nan, np.int32(2)], "c": np.array([1.0])})
    assert json.loads((tmp_path / "s.json").read_text()) == {"a": [None, 2], "b": 1.5, "c": [1.0]}


# ---- profiles and configuration --------------------------------------------------------


def test_profiles():
    grid = Grid(8, 8, 4.0, 4.0)
    X, Y = grid.centers
    np.testing.assert_array_equal(evaluate_profile(0.3, grid), 0.3)
    np.testing.assert_array_equal(evaluate_profile({"profile": "constant", "value": -0.2}, grid), -0.2)
    cb = evaluate_profile({"profile": "checkerboard", "amplitude": 0.5, "kx": 2, "ky": 0}, grid)
    np.testing.assert_allclose(cb, 0.5 * np.cos(2 * np.pi * X / 4.0))
    bump = evaluate_profile({"profile": "cosine-bump", "amplitude": 1.0, "radius": 1.0}, grid)
    assert bump.max() <= 1.0 and bump.min() == 0.0
    tanh = evaluate_profile({"profile": "tanh-interface", "amplitude": 0.9, "radius": 1.0}, grid)
    d = np.hypot(X - 2.0, Y - 2.0)
    np.testing.assert_allclose(tanh, 0.9 * np.tanh(d - 1.0))


def test_profile_from_snapshot(tmp_path):
    grid = Grid(4, 4)
    field = np.arange(16.0).reshape(4, 4) / 20
    io.write_snapshot(tmp_path / "phi0.bin", field, grid, 0.0, "phi")
    np.testing.assert_array_equal(evaluate_profile("phi0.bin", grid, base_dir=tmp_path), field)
    with pytest.raises(ParseError):
        evaluate_profile("phi0.bin", Grid(5, 4), base_dir=tmp_path)
    with pytest.raises(ParseError):
        evaluate_profile("missing.bin", grid, base_dir=tmp_path)


@pytest.mark.parametrize(
    "spec", [{"profile": "spiral"}, {"profile": "constant", "value": "x"}, {"profile": "checkerboard", "phase": 1}, True]
)
def test_bad_profiles(spec):
    with pytest.raises(ParseError):
        evaluate_profile(spec, Grid(4, 4))


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, {"grid": {"nx": 8}, "time": {"T": 1.0}}), out_dir=tmp_path)
    assert cfg.raw["grid"]["ny"] == 8
    assert cfg.raw["time"]["nt"] == DEFAULTS["time"]["nt"]
    assert cfg.raw["cost"]["nu"] == 0.1
    assert cfg.problem().params.gamma == 1.0
    echo = json.loads((tmp_path / ECHO_NAME).read_text())
    assert echo == json.loads(json.dumps(cfg.raw))


def test_parse_error_reports_line_and_field():
    text = '{\n  "grid": {"nx": 8},\n  "time": {"T": 1.0},\n  "phys": {"gama": 1.0}\n}\n'
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == 4 and info.value.field == "phys.gama"
    text = '{\n  "grid": {"nx": 8.5},\n  "time": {"T": 1.0}\n}\n'
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.field == "grid.nx" and info.value.line == 2
    with pytest.raises(ParseError) as info:
        parse_config('{"grid": {"nx": 8},\n "time": {"T": 1.0},,}')
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        parse_config('{"grid": {"nx": 8}}')
    assert info.value.field == "time.T"


@pytest.mark.parametrize(
    "override,code",
    [
        ({"phys": {"gamma": -1.0}}, "A1"),
        ({"control": {"u_min": 1.0, "u_max": 0.0}}, "BOX"),
        ({"data": {"phi0": 0.5, "f": 0.6}, "phys": {"gamma": 1.0}}, "A4"),
        ({"potential": {"c2": 0.0}}, "A2"),
        ({"cost": {"beta1": 0.0, "nu": 0.0}}, "A5"),
    ],
)
def test_validation_error_codes(override, code):
    base = {"grid": {"nx": 4}, "time": {"T": 1.0, "nt": 2}}
    for key, val in override.items():
        base[key] = val
    with pytest.raises(ValidationError) as info:
        parse_config(json.dumps(base))
    assert code in info.value.codes


# ---- CLI --------------------------------------------------------------------------------


def run_cli(*args):
    return cli.main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate_shipped_configs(tmp_path):
    for name in ("smoke.json", "benchmark.json", "control.json"):
        out = tmp_path / name
        assert run_cli("validate", "--config", CONFIGS / name, "--out", out) == 0
        assert (out / ECHO_NAME).exists() and (out / "validation.json").exists()
        assert json.loads((out / "summary.json").read_text())["pass"] is True


def test_simulate_zero_data_gives_zero_diagnostics(tmp_path):
    cfg = write_config(tmp_path, {"grid": {"nx": 6}, "time": {"T": 1.0, "nt": 5}, "output": {"snapshot_stride": 5}})
    out = tmp_path / "out"
    assert run_cli("simulate", "--config", cfg, "--out", out) == 0
    rows = read_csv(out / "diagnostics.csv")
    assert tuple(rows[0]) == cli.CSV_COLUMNS["diagnostics.csv"]
    assert len(rows) == 7
    for row in rows[1:]:
        for col in ("mean_phi", "min_phi", "max_phi", "mean_w", "mean_v", "mass_residual"):
            assert float(row[rows[0].index(col)]) == 0.0
    assert sorted(p.name for p in (out / "snapshots").glob("phi_*.bin")) == ["phi_000000.bin", "phi_000005.bin"]


def test_optimize_and_gradcheck_on_smoke_config(tmp_path):
    assert run_cli("optimize", "--config", SMOKE, "--out", tmp_path / "opt") == 0
    summary = json.loads((tmp_path / "opt" / "summary.json").read_text())
    assert {c["name"] for c in summary["checks"]} == {"converged", "clamp_identity", "variational_inequality"}
    assert tuple(read_csv(tmp_path / "opt" / "history.csv")[0]) == cli.CSV_COLUMNS["history.csv"]
    assert run_cli("gradcheck", "--config", SMOKE, "--out", tmp_path / "gc", "--threads", 2) == 0
    rows = read_csv(tmp_path / "gc" / "gradcheck.csv")
    assert len(rows) == 6 and all(float(r[3]) <= 1e-2 for r in rows[1:])


def test_quench_study_state_part(tmp_path):
    cfg = smoke_variant(tmp_path, study={"control": False})
    out = tmp_path / "qs"
    assert run_cli("quench-study", "--config", cfg, "--out", out) == 0
    for name in ("rate.csv", "separation.csv", "obstacle.csv"):
        assert tuple(read_csv(out / name)[0]) == cli.CSV_COLUMNS[name]
    assert not (out / "continuation.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rate"]["obstacle_eps"] == 1e-4


def test_config_error_exit_code_and_report(tmp_path):
    cfg = write_config(tmp_path, {"grid": {"nx": 4}, "time": {"T": 1.0}, "phys": {"gamma": -1.0}})
    out = tmp_path / "bad"
    assert run_cli("simulate", "--config", cfg, "--out", out) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] is False and summary["violations"][0]["code"] == "A1"
    assert run_cli("validate", "--config", tmp_path / "nope.json", "--out", out) == 2


def test_failed_check_exit_code(tmp_path):
    cfg = smoke_variant(tmp_path, gradcheck={"tol": 1e-12})
    assert run_cli("gradcheck", "--config", cfg, "--out", tmp_path / "gc") == 1
    assert json.loads((tmp_path / "gc" / "summary.json").read_text())["pass"] is False


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("QUENCHCTL_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads("2") == 2
    monkeypatch.setenv("QUENCHCTL_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._threads(None)


def test_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    cfg = smoke_variant(tmp_path, study={"control": False})
    run_cli("quench-study", "--config", cfg, "--out", tmp_path / "a")
    monkeypatch.setenv("QUENCHCTL_THREADS", "4")
    run_cli("quench-study", "--config", cfg, "--out", tmp_path / "b")
    for name in ("rate.csv", "separation.csv", "obstacle.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("quenchctl")
    cmd = [exe] if exe else [sys.executable, "-m", "quenchlab.cli"]
    proc = subprocess.run(
        cmd + ["validate", "--config", str(SMOKE), "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS  assumptions" in proc.stdout
