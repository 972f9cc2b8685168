import json
from pathlib import Path

import numpy as np
import pytest

from sulfatation import cli
from sulfatation.config import ConfigError, config_from_dict, load_config, make_initial
from sulfatation.output import read_snapshot, write_snapshot

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SAMPLES = sorted(CONFIGS.glob("*.json"))


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def line_of(path, needle):
    for i, line in enumerate(path.read_text().splitlines(), 1):
        if needle in line:
            return i
    raise AssertionError(needle)


def zero_cfg():
    return json.loads((CONFIGS / "zero_data.json").read_text())


# -- load_config -------------------------------------------------------------------

@pytest.mark.parametrize("path", SAMPLES, ids=[p.stem for p in SAMPLES])
def test_sample_configs_load(path):
    cfg = load_config(path)
    grid = cfg.build_grid()
    s = cfg.initial_state(grid)
    assert s.w1.shape == (grid.n_macro, grid.n_micro)


def test_four_samples_shipped():
    assert {p.stem for p in SAMPLES} == {"canonical", "zero_data", "henry_equilibrium", "out_of_hypothesis"}


def test_d1_zero_reports_assumption(tmp_path):
    data = zero_cfg()
    data["params"]["d1"] = 0.0
    path = write(tmp_path, data)
    with pytest.raises(ConfigError, match=r"\(A1\) violated") as exc:
        load_config(path)
    assert exc.value.line == line_of(path, '"d1"')


def test_empty_dirichlet_boundary(tmp_path):
    data = zero_cfg()
    data["grid"]["macro"]["tags"] = {"N": ["left", "right"]}
    with pytest.raises(ConfigError, match="Dirichlet"):
        load_config(write(tmp_path, data))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "mode": "evolve",\n  "grid": {\n    "macro": {"dim": 1,, "cells": [4]}\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 4


@pytest.mark.parametrize("mutate, pattern", [
    (lambda d: d.update(mode="fly"), "mode"),
    (lambda d: d.update(colour=1), "unknown key"),
    (lambda d: d["time"].update(dt=-1.0), "dt"),
    (lambda d: d["time"].update(dt="fast"), "dt"),
    (lambda d: d["time"].update(scheme="rk4"), "scheme"),
    (lambda d: d["initial"].update(kind="spiral"), "initial.kind"),
    (lambda d: d.update(kinetics={"psi": {"kind": "cubic"}}), "psi"),
    (lambda d: d.pop("grid"), "grid"),
    (lambda d: d.update(threads=-2), "threads"),
])
def test_structured_errors(tmp_path, mutate, pattern):
    data = zero_cfg()
    mutate(data)
    with pytest.raises(ConfigError, match=pattern):
        load_config(write(tmp_path, data))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize("path", SAMPLES, ids=[p.stem for p in SAMPLES])
def test_round_trip(path):
    cfg = load_config(path)
    again = config_from_dict(json.loads(cfg.dumps()))
    assert again.to_dict() == cfg.to_dict()
    assert again.params == cfg.params


def test_threads_default_to_available_cores():
    cfg = config_from_dict(zero_cfg())
    assert cfg.threads >= 1
    data = zero_cfg()
    data["threads"] = 3
    assert config_from_dict(data).threads == 3


def test_initial_kinds(tmp_path):
    cfg = load_config(CONFIGS / "canonical.json")
    grid = cfg.build_grid()
    p = cfg.params
    D = grid.dirichlet_nodes
    for spec in ({"kind": "constant", "w1": 0.1, "w3": 0.3},
                 {"kind": "cosine", "w1": 0.2, "w2": 0.1, "w3": 0.4, "w4": 0.2},
                 {"kind": "random", "w1": 0.2, "w2": 0.1, "w3": 0.4, "w4": 0.2}):
        s = make_initial(spec, p, grid, seed=3)
        assert np.all(s.w3[D] == p.w3D.initial)
        for a in (s.w1, s.w2, s.w3, s.w4):
            assert a.min() >= 0
    s = make_initial({"kind": "henry"}, p, grid)
    assert np.all(s.w2 == p.henry * p.w3D.initial)
    a = make_initial({"kind": "random", "w1": 1.0}, p, grid, seed=5)
    b = make_initial({"kind": "random", "w1": 1.0}, p, grid, seed=5)
    assert np.array_equal(a.w1, b.w1)
    with pytest.raises(ValueError):
        make_initial({"kind": "cosine", "amplitude": 2.0}, p, grid)


def test_snapshot_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "out_of_hypothesis.json")
    grid = cfg.build_grid()
    s = cfg.initial_state(grid)
    back = read_snapshot(write_snapshot(tmp_path / "s.txt", s, grid), grid)
    for a, b in zip((s.w1, s.w2, s.w3, s.w4), (back.w1, back.w2, back.w3, back.w4)):
        assert np.array_equal(a, b)
    assert back.t == s.t


# -- command line ---------------------------------------------------------------------

def test_run_zero_data(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(CONFIGS / "zero_data.json"), "--output-dir", str(out)]) == 0
    cfg = load_config(CONFIGS / "zero_data.json")
    final = read_snapshot(out / "final_state.txt", cfg.build_grid())
    for a in (final.w1, final.w2, final.w3, final.w4):
        assert np.all(a == 0.0)
    assert final.t == pytest.approx(1.0)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["checks"]["run_completed"]["pass"]
    header = (out / "timeseries.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["step", "t", "energy"] and "mass_defect" in header and "bound_defect" in header
    assert len(list((out / "snapshots").glob("state_*.txt"))) == 5


def test_steady_henry(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["steady", str(CONFIGS / "henry_equilibrium.json"), "--output-dir", str(out)]) == 0
    cfg = load_config(CONFIGS / "henry_equilibrium.json")
    sol = read_snapshot(out / "stationary_state.txt", cfg.build_grid())
    p = cfg.params
    c = p.w3D.limit
    assert np.all(sol.w1 == p.gamma * p.henry * c)
    assert np.all(sol.w2 == p.henry * c) and np.all(sol.w3 == c)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["uniqueness"]["max_distance"] <= 1e-8
    assert (out / "stationary_convergence.csv").read_text().startswith("iteration,residual")


def test_steady_out_of_hypothesis_is_informational(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["steady", str(CONFIGS / "out_of_hypothesis.json"), "--output-dir", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    assert "uniqueness" not in summary["checks"]
    assert "note" in summary["uniqueness"]
    assert code == (0 if summary["converged"] else 1)


def test_verify_small(tmp_path):
    data = json.loads((CONFIGS / "canonical.json").read_text())
    data["grid"]["macro"]["cells"] = [4, 4]
    data["grid"]["micro"]["cells"] = [4, 4]
    data["time"].update(t_end=2.0, dt=1e-2, output_every=0.5)
    out = tmp_path / "out"
    assert cli.main(["verify", str(write(tmp_path, data)), "--output-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "verify"
    assert all(c["pass"] for c in summary["checks"].values())
    assert {"bounds", "mass_balance", "energy_inequality", "oracle_first_order"} <= set(summary["checks"])


def test_malformed_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "mode": \n}\n')
    assert cli.main(["run", str(path), "--output-dir", str(tmp_path / "o")]) == 2
    assert f"{path}:3:" in capsys.readouterr().err


def test_failed_check_exit_code(tmp_path):
    data = zero_cfg()
    data["time"].update(t_end=1.0, max_steps=3)
    out = tmp_path / "out"
    assert cli.main(["run", str(write(tmp_path, data)), "--output-dir", str(out)]) == 1
    assert json.loads((out / "summary.json").read_text())["status"] == "max_steps"


def test_outputs_are_deterministic(tmp_path):
    data = json.loads((CONFIGS / "out_of_hypothesis.json").read_text())
    data["initial"] = {"kind": "random", "w1": 0.4, "w2": 0.2, "w3": 0.5, "w4": 0.2}
    data["time"].update(t_end=0.2, dt=1e-2, output_every=0.1)
    cfg = write(tmp_path, data)
    for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        assert cli.main(["run", str(cfg), "--output-dir", str(tmp_path / name), "--seed", "7",
                         "--threads", threads]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.txt"))
    files += [Path("timeseries.csv")]
    assert len(files) > 2
    for f in files:
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref
    other = tmp_path / "d"
    cli.main(["run", str(cfg), "--output-dir", str(other), "--seed", "8"])
    assert (other / "snapshots" / "state_00000.txt").read_bytes() != \
        (tmp_path / "a" / "snapshots" / "state_00000.txt").read_bytes()


def test_environment_overrides(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv("SULFATATION_OUTPUT_DIR", str(out))
    monkeypatch.setenv("SULFATATION_MAX_STEPS", "2")
    assert cli.main(["run", str(CONFIGS / "zero_data.json")]) == 1
    assert json.loads((out / "summary.json").read_text())["steps"] == 2
    # flags win over the environment
    assert cli.main(["run", str(CONFIGS / "zero_data.json"), "--max-steps", "1000"]) == 0


def test_bad_environment_value(tmp_path, monkeypatch):
    monkeypatch.setenv("SULFATATION_THREADS", "many")
    assert cli.main(["run", str(CONFIGS / "zero_data.json"), "--output-dir", str(tmp_path)]) == 2


def test_help_documents_flags_and_env(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    assert "SULFATATION_OUTPUT_DIR" in text
    with pytest.raises(SystemExit):
        cli.main(["run", "--help"])
    text = capsys.readouterr().out
    for flag in ("--output-dir", "--threads", "--seed", "--steady-tol", "--max-steps"):
        assert flag in text
