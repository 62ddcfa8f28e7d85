import json
import subprocess
import sys

import numpy as np
import pytest

from hsmfg.cli import main, run_pipeline
from hsmfg.errors import ScenarioError
from hsmfg.scenario import load_scenario, scenario_from_dict


def tiny_scenario_dict(coupled=False, notes=""):
    """A fast scalar scenario for pipeline tests."""
    f0 = 0.2 if coupled else 0.0
    major = {
        "B": [[0.5]], "D": [[0.02]], "F": [[f0]], "H": [[0.3 * coupled]],
        "P": [[1.0]], "R": [[1.0]], "P_bar": [[1.0]],
    }
    minor = {
        "B": [[1.0]], "D": [[0.05]], "G": [[0.0]], "F": [[f0]],
        "H1": [[0.2 * coupled]], "H2": [[0.1 * coupled]],
        "P": [[1.0]], "R": [[2.0]], "P_bar": [[1.0]],
    }
    doc = {
        "schema_version": 1,
        "name": "tiny",
        "dims": {"n": 1, "m": 1, "r": 1},
        "horizon": {"T": 2.0, "dt": 0.01},
        "population": {"N_a": 3, "N_b": 3},
        "major": {
            "mode1": dict(major, A=[[{"kind": "exp", "c": 0.2, "a": 0.25}]]),
            "mode2": dict(major, A=[[0.29]]),
        },
        "minor_a": dict(minor, A=[[{"kind": "exp", "c": -1.5, "a": -0.4}]]),
        "minor_b": dict(minor, A=[[{"kind": "exp", "c": -1.1, "a": -0.5}]]),
        "sim": {
            "seed": 11, "runs": 2, "x0": [1.0],
            "minor_init": {
                "a": {"mean": [0.6], "cov": [[0.01]]},
                "b": {"mean": [0.4], "cov": [[0.01]]},
            },
        },
    }
    if notes:
        doc["notes"] = notes
    return doc


def test_round_trip_identical(tmp_path):
    sc = scenario_from_dict(tiny_scenario_dict(coupled=True, notes="hi"))
    path = tmp_path / "tiny.json"
    sc.save(path)
    again = load_scenario(str(path))
    assert again.to_dict() == sc.to_dict()


def test_unknown_keys_rejected():
    doc = tiny_scenario_dict()
    doc["extra"] = 1
    with pytest.raises(ScenarioError, match="unknown keys"):
        scenario_from_dict(doc)
    doc = tiny_scenario_dict()
    doc["minor_a"]["Q"] = [[1.0]]
    with pytest.raises(ScenarioError, match="unknown keys"):
        scenario_from_dict(doc)
    doc = tiny_scenario_dict()
    doc["sim"]["minor_init"]["a"]["stdev"] = 1.0
    with pytest.raises(ScenarioError, match="unknown keys"):
        scenario_from_dict(doc)


def test_schema_validation_errors():
    doc = tiny_scenario_dict()
    doc["schema_version"] = 99
    with pytest.raises(ScenarioError, match="schema_version"):
        scenario_from_dict(doc)
    doc = tiny_scenario_dict()
    doc["horizon"]["dt"] = 0.3
    with pytest.raises(ScenarioError, match="dt must divide"):
        scenario_from_dict(doc)
    doc = tiny_scenario_dict()
    doc["population"] = {"N_a": 3}
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)
    doc = tiny_scenario_dict()
    doc["sim"]["x0"] = [1.0, 2.0]
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_population_fraction_variant():
    doc = tiny_scenario_dict()
    doc["population"] = {"pi_a": 0.5, "pi_b": 0.5}
    sc = scenario_from_dict(doc)
    assert sc.N_a is None
    with pytest.raises(ScenarioError, match="agent counts"):
        sc.sim_config()
    cfg = sc.sim_config(agents=(4, 4))
    assert cfg.N == 8


def test_bundled_scenario_loads(sec4_scenario):
    assert sec4_scenario.n == 2
    assert sec4_scenario.N_a == sec4_scenario.N_b == 50
    assert sec4_scenario.T == 18.0
    t = 0.3
    Ab = sec4_scenario.minor_b.A.at(t)
    assert Ab[0, 0] == pytest.approx(5 * np.exp(-1.5 * t) * np.cos(t))
    assert Ab[1, 0] == pytest.approx(5 * np.exp(-2.0 * t) * np.sin(t))
    with pytest.raises(ScenarioError, match="bundled"):
        load_scenario("no_such_scenario")


def test_solve_stage_emits_only_riccati_and_meanfield(tmp_path):
    sc = scenario_from_dict(tiny_scenario_dict())
    manifest = run_pipeline(sc, ["solve"], tmp_path)
    names = set(manifest["files"])
    assert any(n.startswith("riccati_major") for n in names)
    assert "schedule.txt" not in names
    assert "trajectories.csv" not in names
    assert "nash_report.csv" not in names
    assert (tmp_path / "manifest.json").exists()


def test_full_pipeline_and_stable_manifest_hash(tmp_path):
    sc = scenario_from_dict(tiny_scenario_dict(coupled=True))
    m1 = run_pipeline(sc, ["solve", "sequence", "simulate"],
                      tmp_path / "run1", seed=7)
    m2 = run_pipeline(sc, ["solve", "sequence", "simulate"],
                      tmp_path / "run2", seed=7)
    assert m1["manifest_hash"] == m2["manifest_hash"]
    m3 = run_pipeline(sc, ["solve", "sequence", "simulate"],
                      tmp_path / "run3", seed=8)
    assert m3["manifest_hash"] != m1["manifest_hash"]
    names = set(m1["files"])
    assert {"schedule.txt", "trajectories.csv", "plot_states.csv",
            "plot_controls.csv", "plots.gp"} <= names
    # trajectory CSV columns
    header = (tmp_path / "run1" / "trajectories.csv").read_text(
        encoding="utf-8").splitlines()[0]
    assert header == "t,agent_id,type,active,x_1,u_1"
    sched = (tmp_path / "run1" / "schedule.txt").read_text(encoding="utf-8")
    assert "# selected schedule" in sched
    # plot data: t plus the major and up to 10 sample minors per type
    plot_header = (tmp_path / "run1" / "plot_states.csv").read_text(
        encoding="utf-8").splitlines()[0]
    assert len(plot_header.split(",")) == 1 + (1 + 3 + 3) * 1


def test_verify_stage_writes_nash_report(tmp_path):
    sc = scenario_from_dict(tiny_scenario_dict())
    manifest = run_pipeline(sc, ["verify"], tmp_path, runs=30,
                            nash_ladder=[4, 6])
    assert "nash_report.csv" in manifest["files"]
    lines = (tmp_path / "nash_report.csv").read_text().splitlines()
    assert lines[0] == "N,J_eq,J_dev,epsilon,stderr"
    assert len(lines) == 4  # two ladder rows plus the exact-mean row
    assert "verify.txt" in manifest["files"]


def test_cli_main_ok_and_exit_codes(tmp_path, capsys):
    path = tmp_path / "tiny.json"
    with open(path, "w") as fh:
        json.dump(tiny_scenario_dict(), fh)
    rc = main(["--config", str(path), "--stages", "solve",
               "--out", str(tmp_path / "out")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "schedule:" in out and "manifest hash:" in out

    assert main(["--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "out2")]) == 2
    assert main(["--config", str(path), "--agents", "oops",
                 "--out", str(tmp_path / "out3")]) == 2
    bad = tiny_scenario_dict()
    bad["dims"]["n"] = 2  # inconsistent with the 1x1 matrices
    bad_path = tmp_path / "bad.json"
    with open(bad_path, "w") as fh:
        json.dump(bad, fh)
    assert main(["--config", str(bad_path),
                 "--out", str(tmp_path / "out4")]) == 2


def test_strict_mode_promotes_fallbacks(tmp_path):
    # an empirical fraction away from the modelled split is a fallback path
    path = tmp_path / "tiny.json"
    with open(path, "w") as fh:
        json.dump(tiny_scenario_dict(), fh)
    args = ["--config", str(path), "--stages", "simulate",
            "--agents", "5,1", "--out", str(tmp_path / "out")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 2


def test_nash_probe_count_budget(tmp_path):
    from hsmfg.sequencer import stay_schedule
    from hsmfg.simulate import nash_gap
    from conftest import nash_automaton

    aut = nash_automaton()
    sched = stay_schedule(aut, 2.0, 0.01, np.array([1.0, 0.6, 0.4]))
    from hsmfg.simulate import SimConfig

    cfg = SimConfig(N_a=1, N_b=1, T=2.0, dt=0.01, seed=3, runs=12,
                    x0=[1.0], minor_mean={"a": [0.6], "b": [0.4]},
                    minor_cov={"a": [[0.04]], "b": [[0.04]]})
    one = nash_gap(aut, sched, cfg, [8], include_exact_mean=False)
    two = nash_gap(aut, sched, cfg, [8], probe_count=2,
                   include_exact_mean=False)
    assert one.rows[0].epsilon >= 0.0 and two.rows[0].epsilon >= 0.0
    assert two.rows[0].stderr <= one.rows[0].stderr * 1.2


def test_cli_error_code_mapping(monkeypatch, tmp_path):
    import hsmfg.cli as cli
    from hsmfg.errors import (AmbiguousEventError, ConsistencyError,
                              InstabilityError)

    path = tmp_path / "tiny.json"
    with open(path, "w") as fh:
        json.dump(tiny_scenario_dict(), fh)

    def raiser(exc):
        def fn(*a, **kw):
            raise exc

        return fn

    monkeypatch.setattr(cli, "run_pipeline",
                        raiser(ConsistencyError([1.0], 1e-9)))
    assert main(["--config", str(path), "--out", str(tmp_path / "o")]) == 3
    monkeypatch.setattr(cli, "run_pipeline",
                        raiser(AmbiguousEventError([1.0, 2.0])))
    assert main(["--config", str(path), "--out", str(tmp_path / "o")]) == 4
    monkeypatch.setattr(cli, "run_pipeline",
                        raiser(InstabilityError("minor #3", 10, 0.1)))
    assert main(["--config", str(path), "--out", str(tmp_path / "o")]) == 5


def test_console_entry_point_runs(tmp_path):
    path = tmp_path / "tiny.json"
    with open(path, "w") as fh:
        json.dump(tiny_scenario_dict(), fh)
    proc = subprocess.run(
        [sys.executable, "-m", "hsmfg.cli", "--config", str(path),
         "--stages", "solve", "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
