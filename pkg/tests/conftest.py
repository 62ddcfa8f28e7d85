"""Shared fixtures: small scalar systems with known event structure."""

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from hsmfg.automaton import (ModeSpec, PopulationFractions, build_automaton,
                             modes_from_classes)
from hsmfg.matfun import Entries
from hsmfg.scenario import load_scenario


def entry(kind, c, a=0.0, b=0.0):
    """Scalar 1x1 matrix function from a single named term."""
    return Entries([[[(kind, c, a, b)]]])


def scalar_automaton(**overrides):
    """Scalar system where one switch and both stops realize.

    Analytic event times (zero coupling keeps every gap scalar):
      major switch where 0.2*exp(t/4) crosses 0.29  -> 4*ln(1.45)
      pop b stop  where 0.5 = 2.2*exp(-t/2)         -> 2*ln(4.4)
      pop a stop  where 0.5 = 3.0*exp(-0.4t)        -> ln(6)/0.4
    """
    base = dict(
        major1=ModeSpec(A=entry("exp", 0.2, 0.25), B=[[0.5]], D=[[0.02]],
                        P=[[1.0]], R=[[1.0]], P_bar=[[1.0]]),
        major2=ModeSpec(A=entry("const", 0.29), B=[[0.5]], D=[[0.02]],
                        P=[[1.0]], R=[[1.0]], P_bar=[[1.0]]),
        minor_a=ModeSpec(A=entry("exp", -1.5, -0.4), B=[[1.0]], D=[[0.03]],
                         P=[[1.0]], R=[[2.0]], P_bar=[[1.0]]),
        minor_b=ModeSpec(A=entry("exp", -1.1, -0.5), B=[[1.0]], D=[[0.03]],
                         P=[[1.0]], R=[[2.0]], P_bar=[[1.0]]),
        pi=PopulationFractions(0.5, 0.5),
    )
    base.update(overrides)
    modes = modes_from_classes(base["major1"], base["major2"],
                               base["minor_a"], base["minor_b"])
    return build_automaton(1, modes, base["pi"])


SCALAR_T = 6.0
SCALAR_H = 0.01
T_MAJOR = 4.0 * np.log(1.45)
T_STOP_B = 2.0 * np.log(4.4)
T_STOP_A = np.log(6.0) / 0.4


def coupled_scalar_automaton(sigma_major=0.0):
    """Scalar system with live mean-field couplings (no realizable events)."""
    major = dict(B=[[0.5]], D=[[sigma_major]], P=[[1.0]], R=[[1.0]],
                 P_bar=[[1.0]], F=[[0.4]], H=[[0.5]])
    minor = dict(B=[[1.0]], D=[[0.25]], P=[[1.0]], R=[[1.0]], P_bar=[[1.0]],
                 F=[[0.5]], G=[[0.1]], H1=[[0.3]], H2=[[0.4]])
    modes = modes_from_classes(
        ModeSpec(A=entry("const", -0.3), **major),
        ModeSpec(A=entry("const", -0.5), **major),
        ModeSpec(A=entry("const", -0.4), **minor),
        ModeSpec(A=entry("const", -0.6), **minor),
    )
    return build_automaton(1, modes, PopulationFractions(0.5, 0.5))


def nash_automaton():
    """Deterministic major, minors that never read the empirical average.

    The probe-to-others feedback channel is closed, so the frozen-others
    deviation problem is the probe's exact conditional problem and the
    epsilon estimates carry no surrogate bias.
    """
    major = dict(B=[[0.5]], D=[[0.0]], P=[[1.0]], R=[[1.0]], P_bar=[[1.0]],
                 H=[[0.5]])
    minor = dict(B=[[1.0]], D=[[0.3]], P=[[1.0]], R=[[1.0]], P_bar=[[1.0]],
                 H1=[[0.3]], H2=[[0.6]])
    modes = modes_from_classes(
        ModeSpec(A=entry("const", -0.3), **major),
        ModeSpec(A=entry("const", -0.5), **major),
        ModeSpec(A=entry("const", -0.5), **minor),
        ModeSpec(A=entry("const", -0.7), **minor),
    )
    return build_automaton(1, modes, PopulationFractions(0.5, 0.5))


def zero_coupling_automaton(n=1):
    """All couplings zero; everything decouples exactly."""
    eye = np.eye(n)
    major = dict(B=0.5 * eye[:, :1], D=0.02 * eye, P=eye, R=[[1.0]],
                 P_bar=eye)
    minor = dict(B=eye[:, :1], D=0.03 * eye, P=eye, R=[[2.0]], P_bar=eye)
    A1 = Entries([[[("exp", 0.2 if i == j else 0.0, 0.25, 0.0)]
                   for j in range(n)] for i in range(n)])
    A2 = Entries([[[("const", 0.29 if i == j else 0.0, 0.0, 0.0)]
                   for j in range(n)] for i in range(n)])
    Aa = Entries([[[("exp", -1.5 if i == j else 0.0, -0.4, 0.0)]
                   for j in range(n)] for i in range(n)])
    Ab = Entries([[[("exp", -1.1 if i == j else 0.0, -0.5, 0.0)]
                   for j in range(n)] for i in range(n)])
    modes = modes_from_classes(
        ModeSpec(A=A1, **major), ModeSpec(A=A2, **major),
        ModeSpec(A=Aa, **minor), ModeSpec(A=Ab, **minor))
    return build_automaton(n, modes, PopulationFractions(0.5, 0.5))


@pytest.fixture(scope="session")
def scalar_aut():
    return scalar_automaton()


@pytest.fixture(scope="session")
def scalar_enum(scalar_aut):
    from hsmfg.sequencer import enumerate_schedules

    return enumerate_schedules(scalar_aut, SCALAR_T, SCALAR_H,
                               np.array([1.0, 0.6, 0.4]))


@pytest.fixture(scope="session")
def sec4_scenario():
    return load_scenario("paper_sec4")


@pytest.fixture(scope="session")
def sec4_automaton(sec4_scenario):
    return sec4_scenario.automaton()


def brute_force_switch_times(A_before, A_after, S, P, C_of_s, T, h, x0,
                             sigma=0.0, n_sub=2):
    """Independent oracle: expected cost of committing to each event time.

    For every candidate s on the grid, the scalar Riccati is integrated
    backward from the weight C(s) at s with plain RK4 (vectorised over the
    candidates, marched jointly from the latest candidate down to zero), and
    the cost x0^2*Pi(0) + trace term is reported.  Works for a stopping
    problem (A_after unused) and for a switch (C(s) = Pi_after(s)).
    """
    K = int(round(T / h))
    cand = h * np.arange(K + 1)
    Pi = np.array([C_of_s(s) for s in cand], dtype=float)
    trace = np.zeros(K + 1)
    active = np.zeros(K + 1, dtype=bool)
    step = h / n_sub

    def f(v, t):
        return 2.0 * A_before(t) * v - S * v * v + P

    for node in range(K, 0, -1):
        active[node] = True
        t_hi = cand[node]
        for s_i in range(n_sub):
            t1 = t_hi - s_i * step
            v = Pi[active]
            k1 = f(v, t1)
            k2 = f(v + 0.5 * step * k1, t1 - 0.5 * step)
            k3 = f(v + 0.5 * step * k2, t1 - 0.5 * step)
            k4 = f(v + step * k3, t1 - step)
            Pi[active] = v + (step / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        trace[active] += sigma * sigma * Pi[active] * h
    costs = x0 * x0 * Pi + trace
    return cand, costs
