"""Scenario files: the strict, versioned configuration schema.

A scenario is a JSON document with a ``schema_version`` field.  Unknown keys
are rejected everywhere so a mistyped matrix name cannot silently fall back
to a default.  State matrices may be time varying through named-function
entries (c*exp(a*t), optionally times cos(b*t) or sin(b*t)); every other
matrix is constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .automaton import (Automaton, ModeSpec, PopulationFractions,
                        build_automaton, modes_from_classes)
from .errors import ScenarioError
from .matfun import Entries, entries_from_config, entries_to_config
from .simulate import SimConfig

SCHEMA_VERSION = 1

_MAJOR_KEYS = {"A", "B", "D", "F", "H", "P", "R", "P_bar"}
_MINOR_KEYS = {"A", "B", "D", "G", "F", "H1", "H2", "P", "R", "P_bar"}


def _require_keys(d, allowed, required, where):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be a mapping")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in {where}")
    missing = set(required) - set(d)
    if missing:
        raise ScenarioError(f"missing keys {sorted(missing)} in {where}")


def _const_matrix(spec, shape, where) -> np.ndarray:
    m = entries_from_config(spec, shape)
    if not m.constant:
        raise ScenarioError(f"{where} must be constant")
    return m.at(0.0)


@dataclass
class ClassConfig:
    """Raw matrices of one agent class (A kept as a named-function table)."""

    A: Entries
    B: np.ndarray
    D: np.ndarray
    F: np.ndarray
    P: np.ndarray
    R: np.ndarray
    P_bar: np.ndarray
    H: np.ndarray | None = None
    G: np.ndarray | None = None
    H1: np.ndarray | None = None
    H2: np.ndarray | None = None

    def to_mode_spec(self) -> ModeSpec:
        return ModeSpec(A=self.A, B=self.B, D=self.D, F=self.F, P=self.P,
                        R=self.R, P_bar=self.P_bar, H=self.H, G=self.G,
                        H1=self.H1, H2=self.H2)


def _parse_class(d, n, m, r, role, where) -> ClassConfig:
    keys = _MAJOR_KEYS if role == "major" else _MINOR_KEYS
    _require_keys(d, keys, {"A", "B", "D"}, where)
    A = entries_from_config(d["A"], (n, n))
    out = ClassConfig(
        A=A,
        B=_const_matrix(d["B"], (n, m), f"{where}.B"),
        D=_const_matrix(d["D"], (n, r), f"{where}.D"),
        F=(_const_matrix(d["F"], (n, n), f"{where}.F")
           if "F" in d else np.zeros((n, n))),
        P=(_const_matrix(d["P"], (n, n), f"{where}.P")
           if "P" in d else np.eye(n)),
        R=(_const_matrix(d["R"], (m, m), f"{where}.R")
           if "R" in d else np.eye(m)),
        P_bar=(_const_matrix(d["P_bar"], (n, n), f"{where}.P_bar")
               if "P_bar" in d else np.eye(n)),
    )
    if role == "major":
        out.H = (_const_matrix(d["H"], (n, n), f"{where}.H")
                 if "H" in d else np.zeros((n, n)))
    else:
        out.G = (_const_matrix(d["G"], (n, n), f"{where}.G")
                 if "G" in d else np.zeros((n, n)))
        out.H1 = (_const_matrix(d["H1"], (n, n), f"{where}.H1")
                  if "H1" in d else np.zeros((n, n)))
        out.H2 = (_const_matrix(d["H2"], (n, n), f"{where}.H2")
                  if "H2" in d else np.zeros((n, n)))
    return out


def _class_to_dict(c: ClassConfig, role) -> dict:
    def mat(M):
        return [[float(v) for v in row] for row in np.asarray(M)]

    d = {"A": entries_to_config(c.A), "B": mat(c.B), "D": mat(c.D),
         "F": mat(c.F), "P": mat(c.P), "R": mat(c.R), "P_bar": mat(c.P_bar)}
    if role == "major":
        d["H"] = mat(c.H)
    else:
        d["G"] = mat(c.G)
        d["H1"] = mat(c.H1)
        d["H2"] = mat(c.H2)
    return d


@dataclass
class Scenario:
    """Everything a pipeline run needs, as loaded from one config file."""

    name: str
    n: int
    m: int
    r: int
    T: float
    dt: float
    N_a: int | None
    N_b: int | None
    pi: PopulationFractions
    major1: ClassConfig
    major2: ClassConfig
    minor_a: ClassConfig
    minor_b: ClassConfig
    seed: int
    runs: int
    x0: np.ndarray
    minor_mean: dict
    minor_cov: dict
    notes: str = ""

    def automaton(self) -> Automaton:
        modes = modes_from_classes(
            self.major1.to_mode_spec(), self.major2.to_mode_spec(),
            self.minor_a.to_mode_spec(), self.minor_b.to_mode_spec())
        return build_automaton(self.n, modes, self.pi)

    def sim_config(self, *, seed=None, runs=None, agents=None) -> SimConfig:
        N_a, N_b = self.N_a, self.N_b
        if agents is not None:
            N_a, N_b = agents
        if N_a is None or N_b is None:
            raise ScenarioError(
                "scenario gives only population fractions; pass explicit "
                "agent counts to simulate")
        return SimConfig(
            N_a=N_a, N_b=N_b, T=self.T, dt=self.dt,
            seed=self.seed if seed is None else seed,
            runs=self.runs if runs is None else runs,
            x0=self.x0, minor_mean=self.minor_mean, minor_cov=self.minor_cov)

    def x0_extended(self) -> np.ndarray:
        return np.concatenate([self.x0, self.minor_mean["a"],
                               self.minor_mean["b"]])

    def to_dict(self) -> dict:
        pop = ({"N_a": self.N_a, "N_b": self.N_b}
               if self.N_a is not None
               else {"pi_a": self.pi.pi_a, "pi_b": self.pi.pi_b})
        d = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "dims": {"n": self.n, "m": self.m, "r": self.r},
            "horizon": {"T": self.T, "dt": self.dt},
            "population": pop,
            "major": {"mode1": _class_to_dict(self.major1, "major"),
                      "mode2": _class_to_dict(self.major2, "major")},
            "minor_a": _class_to_dict(self.minor_a, "minor"),
            "minor_b": _class_to_dict(self.minor_b, "minor"),
            "sim": {
                "seed": self.seed,
                "runs": self.runs,
                "x0": [float(v) for v in self.x0],
                "minor_init": {
                    k: {"mean": [float(v) for v in self.minor_mean[k]],
                        "cov": [[float(v) for v in row]
                                for row in self.minor_cov[k]]}
                    for k in ("a", "b")
                },
            },
        }
        if self.notes:
            d["notes"] = self.notes
        return d

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def scenario_from_dict(doc: dict) -> Scenario:
    _require_keys(doc, {"schema_version", "name", "dims", "horizon",
                        "population", "major", "minor_a", "minor_b", "sim",
                        "notes"},
                  {"schema_version", "dims", "horizon", "population",
                   "major", "minor_a", "minor_b", "sim"}, "scenario")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(
            f"unsupported schema_version {doc['schema_version']!r}")
    _require_keys(doc["dims"], {"n", "m", "r"}, {"n", "m", "r"}, "dims")
    n, m, r = (int(doc["dims"][k]) for k in ("n", "m", "r"))
    _require_keys(doc["horizon"], {"T", "dt"}, {"T", "dt"}, "horizon")
    T, dt = float(doc["horizon"]["T"]), float(doc["horizon"]["dt"])
    if T <= 0 or dt <= 0 or abs(T / dt - round(T / dt)) > 1e-9:
        raise ScenarioError("dt must divide T")

    pop = doc["population"]
    if set(pop) == {"N_a", "N_b"}:
        N_a, N_b = int(pop["N_a"]), int(pop["N_b"])
        N = N_a + N_b
        pi = PopulationFractions(N_a / N, N_b / N)
    elif set(pop) == {"pi_a", "pi_b"}:
        N_a = N_b = None
        pi = PopulationFractions(float(pop["pi_a"]), float(pop["pi_b"]))
        if abs(pi.pi_a + pi.pi_b - 1.0) > 1e-12:
            raise ScenarioError("population fractions must sum to one")
    else:
        raise ScenarioError(
            "population must give {N_a, N_b} or {pi_a, pi_b}")

    _require_keys(doc["major"], {"mode1", "mode2"}, {"mode1", "mode2"},
                  "major")
    major1 = _parse_class(doc["major"]["mode1"], n, m, r, "major",
                          "major.mode1")
    major2 = _parse_class(doc["major"]["mode2"], n, m, r, "major",
                          "major.mode2")
    minor_a = _parse_class(doc["minor_a"], n, m, r, "minor", "minor_a")
    minor_b = _parse_class(doc["minor_b"], n, m, r, "minor", "minor_b")

    sim = doc["sim"]
    _require_keys(sim, {"seed", "runs", "x0", "minor_init"},
                  {"seed", "runs", "x0", "minor_init"}, "sim")
    x0 = np.asarray(sim["x0"], dtype=float)
    if x0.shape != (n,):
        raise ScenarioError(f"sim.x0 must have length {n}")
    _require_keys(sim["minor_init"], {"a", "b"}, {"a", "b"}, "sim.minor_init")
    mean, cov = {}, {}
    for k in ("a", "b"):
        entry = sim["minor_init"][k]
        _require_keys(entry, {"mean", "cov"}, {"mean", "cov"},
                      f"sim.minor_init.{k}")
        mean[k] = np.asarray(entry["mean"], dtype=float)
        cov[k] = np.asarray(entry["cov"], dtype=float)
        if mean[k].shape != (n,) or cov[k].shape != (n, n):
            raise ScenarioError(f"sim.minor_init.{k} has wrong dimensions")

    return Scenario(
        name=str(doc.get("name", "")), n=n, m=m, r=r, T=T, dt=dt,
        N_a=N_a, N_b=N_b, pi=pi, major1=major1, major2=major2,
        minor_a=minor_a, minor_b=minor_b,
        seed=int(sim["seed"]), runs=int(sim["runs"]), x0=x0,
        minor_mean=mean, minor_cov=cov, notes=str(doc.get("notes", "")))


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario file, or a bundled scenario by bare name."""
    name = str(path_or_name)
    if "/" not in name and not name.endswith(".json"):
        ref = resources.files("hsmfg.scenarios").joinpath(f"{name}.json")
        if ref.is_file():
            return scenario_from_dict(json.loads(ref.read_text("utf-8")))
        raise ScenarioError(f"no bundled scenario named {name!r}")
    try:
        with open(name, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
