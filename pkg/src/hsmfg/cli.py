"""Command-line pipeline: load a scenario, solve, sequence, simulate, verify.

Exit codes: 2 configuration error, 3 solver non-convergence, 4 event-time
ambiguity, 5 simulation instability.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import (AmbiguousEventError, ConsistencyError, DefinitenessError,
                     FiniteEscapeError, InstabilityError, ScenarioError)
from .scenario import Scenario, load_scenario
from .sequencer import (enumerate_schedules, schedule_report,
                        select_optimal, stay_schedule)
from .simulate import FallbackWarning, nash_gap, simulate, stability_check

STAGES = ("solve", "sequence", "simulate", "verify")


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_riccati(out_dir, schedule, artifacts):
    for lbl, ms in schedule.solves.items():
        path = out_dir / f"riccati_major_{lbl}.csv"
        ms.sol_major.to_csv(path)
        artifacts.append(path)
        for k, sol in ms.sol_minor.items():
            path = out_dir / f"riccati_minor_{k}_{lbl}.csv"
            sol.to_csv(path)
            artifacts.append(path)


def _write_meanfield(out_dir, schedule, artifacts):
    for lbl, ms in schedule.solves.items():
        if not ms.law:
            continue
        path = out_dir / f"meanfield_{lbl}.csv"
        ks = sorted(ms.law)
        header = ["t"]
        for k in ks:
            e = ms.law[k]
            n, w = e.A_bar.shape[1:]
            header += [f"A_bar_{k}_{i + 1}_{j + 1}" for i in range(n)
                       for j in range(w)]
            header += [f"G_bar_{k}_{i + 1}_{j + 1}" for i in range(n)
                       for j in range(n)]
        rows = []
        e0 = ms.law[ks[0]]
        for idx in range(0, e0.A_bar.shape[0], 2):  # report on the h grid
            t = e0.t0 + idx * e0.dt
            row = [f"{t:.10g}"]
            for k in ks:
                row += [f"{v:.17g}" for v in ms.law[k].A_bar[idx].reshape(-1)]
                row += [f"{v:.17g}" for v in ms.law[k].G_bar[idx].reshape(-1)]
            rows.append(row)
        _write_csv(path, header, rows)
        artifacts.append(path)


def _write_trajectories(out_dir, record, artifacts):
    n = record.states.shape[2]
    m = record.controls.shape[2]
    path = out_dir / "trajectories.csv"
    header = (["t", "agent_id", "type", "active"]
              + [f"x_{i + 1}" for i in range(n)]
              + [f"u_{i + 1}" for i in range(m)])
    rows = []
    for ti, t in enumerate(record.grid):
        for aid, typ in enumerate(record.types):
            rows.append(
                [f"{t:.10g}", aid, typ, int(record.active[ti, aid])]
                + [f"{v:.10g}" for v in record.states[ti, aid]]
                + [f"{v:.10g}" for v in record.controls[ti, aid]])
    _write_csv(path, header, rows)
    artifacts.append(path)


def _write_plot_data(out_dir, record, artifacts, samples=10):
    """Wide-format plot data: the major plus sample minors of each type."""
    ids = {"major": [0]}
    for typ in ("a", "b"):
        ids[typ] = [i for i, t in enumerate(record.types) if t == typ][:samples]
    cols = [("major", 0)] + [(t, i) for t in ("a", "b") for i in ids[t]]

    for kind, data in (("states", record.states),
                       ("controls", record.controls)):
        path = out_dir / f"plot_{kind}.csv"
        width = data.shape[2]
        header = ["t"] + [f"{typ}{aid:03d}_{c + 1}" for typ, aid in cols
                          for c in range(width)]
        rows = []
        for ti, t in enumerate(record.grid):
            row = [f"{t:.10g}"]
            for typ, aid in cols:
                for c in range(width):
                    v = data[ti, aid, c] if record.active[ti, aid] else np.nan
                    row.append(f"{v:.10g}")
            rows.append(row)
        _write_csv(path, header, rows)
        artifacts.append(path)

    gp = out_dir / "plots.gp"
    gp.write_text(
        "# gnuplot companion for plot_states.csv / plot_controls.csv\n"
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel 't'\n"
        "set term pngcairo size 1200,500\n"
        "set output 'states.png'\n"
        "plot for [i=2:*] 'plot_states.csv' using 1:i with lines\n"
        "set output 'controls.png'\n"
        "plot for [i=2:*] 'plot_controls.csv' using 1:i with lines\n",
        encoding="utf-8")
    artifacts.append(gp)


def _write_nash(out_dir, report, artifacts):
    path = out_dir / "nash_report.csv"
    rows = [[r.N, f"{r.J_eq:.10g}", f"{r.J_dev:.10g}", f"{r.epsilon:.10g}",
             f"{r.stderr:.10g}"] for r in report.rows]
    if report.exact_mean_row is not None:
        r = report.exact_mean_row
        rows.append([f"{r.N}(exact-mean)", f"{r.J_eq:.10g}",
                     f"{r.J_dev:.10g}", f"{r.epsilon:.10g}",
                     f"{r.stderr:.10g}"])
    _write_csv(path, ["N", "J_eq", "J_dev", "epsilon", "stderr"], rows)
    artifacts.append(path)


def run_pipeline(scenario: Scenario, stages, out_dir, *, seed=None, runs=None,
                 agents=None, strict=False, nash_ladder=None) -> dict:
    """Execute the requested stages in dependency order; emit artifacts.

    Returns the manifest mapping.  ``strict`` promotes documented fallback
    paths (grid snapping, fraction mismatches) to hard errors.
    """
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ScenarioError(f"unknown stages {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []

    aut = scenario.automaton()
    h = scenario.dt
    T = scenario.T
    x0ex = scenario.x0_extended()

    with warnings.catch_warnings():
        if strict:
            warnings.simplefilter("error", FallbackWarning)

        schedule = None
        report_text = None
        if "sequence" in stages:
            enum = enumerate_schedules(aut, T, h, x0ex)
            schedule = select_optimal(enum.schedules)
            report_text = schedule_report(enum, schedule, T)
        else:
            schedule = stay_schedule(aut, T, h, x0ex)

        if "solve" in stages or "sequence" in stages:
            _write_riccati(out_dir, schedule, artifacts)
            _write_meanfield(out_dir, schedule, artifacts)
        if report_text is not None:
            path = out_dir / "schedule.txt"
            path.write_text(report_text, encoding="utf-8")
            artifacts.append(path)

        sim_needed = {"simulate", "verify"} & stages
        if sim_needed:
            cfg = scenario.sim_config(seed=seed, runs=runs, agents=agents)
        if "simulate" in stages:
            res = simulate(aut, schedule, cfg, record=True)
            _write_trajectories(out_dir, res.record, artifacts)
            _write_plot_data(out_dir, res.record, artifacts)
        if "verify" in stages:
            ladder = nash_ladder or sorted({max(2, cfg.N // 10),
                                            max(2, cfg.N // 2), cfg.N})
            report = nash_gap(aut, schedule, cfg, ladder)
            _write_nash(out_dir, report, artifacts)
            ver_cfg = cfg if cfg.runs >= 30 else cfg.with_counts(
                cfg.N_a, cfg.N_b)
            if ver_cfg.runs < 30:
                ver_cfg.runs = 30
            res = simulate(aut, schedule, ver_cfg)
            moments, ok = stability_check(res)
            path = out_dir / "verify.txt"
            path.write_text(
                "second-order stability: max_t E||x_i(t)||^2\n"
                f"  worst agent: {float(moments.max()):.6g}"
                f" (bound 1e6: {'pass' if ok.all() else 'FAIL'})\n",
                encoding="utf-8")
            artifacts.append(path)

    manifest = {
        "scenario": scenario.name,
        "stages": sorted(stages),
        "schedule": {
            "path": list(schedule.path),
            "times": [float(t) for t in schedule.times],
            "value": schedule.value,
        },
        "files": {},
    }
    for path in sorted(artifacts):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest["files"][path.name] = digest
    blob = json.dumps(manifest["files"], sort_keys=True).encode()
    manifest["manifest_hash"] = hashlib.sha256(blob).hexdigest()
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hsmfg",
        description="Hybrid-switching mean field game solver and simulator")
    p.add_argument("--config", required=True,
                   help="scenario file, or a bundled scenario name")
    p.add_argument("--stages", default="solve,sequence,simulate",
                   help="comma-separated subset of solve,sequence,simulate,"
                        "verify")
    p.add_argument("--seed", type=int, default=None, help="RNG seed override")
    p.add_argument("--runs", type=int, default=None,
                   help="Monte Carlo replications override")
    p.add_argument("--agents", default=None,
                   help='population sizes as "Na,Nb"')
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--strict", action="store_true",
                   help="fail on any documented fallback path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    agents = None
    if args.agents:
        try:
            na, nb = (int(v) for v in args.agents.split(","))
        except ValueError:
            print("error: --agents expects 'Na,Nb'", file=sys.stderr)
            return 2
        agents = (na, nb)
    try:
        scenario = load_scenario(args.config)
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        manifest = run_pipeline(scenario, stages, args.out, seed=args.seed,
                                runs=args.runs, agents=agents,
                                strict=args.strict)
    except (ScenarioError, FallbackWarning) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConsistencyError, FiniteEscapeError, DefinitenessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except AmbiguousEventError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    sched = manifest["schedule"]
    times = ", ".join(f"{t:.4g}" for t in sched["times"]) or "none"
    print(f"schedule: {' -> '.join(sched['path'])}")
    print(f"event times: {times}")
    print(f"expected major cost: {sched['value']:.6g}")
    print(f"manifest hash: {manifest['manifest_hash']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
