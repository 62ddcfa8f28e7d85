"""Backward dynamic programming over the automaton.

Schedules are discovered suffix-first: starting from every state's
"stay here until the horizon" solution, each incoming edge is tested for a
realizable event time by locating the common zero crossing of the
Hamiltonian-continuity gaps (the major's always; a stopping condition for the
subpopulation that leaves; a continuity condition for one that survives).
Backward quantities depend only on later event times, so suffixes extend one
stage at a time without re-solving what is already known.  Before-mode
coefficients at a candidate instant are the jump images of the after-mode
solution, which keeps each stage self-contained.

Event times are deterministic data of the model: nothing here consumes
randomness, and the candidate values depend on the initial state only through
the final value comparison.  Everything operates on immutable inputs;
independent suffixes could be evaluated concurrently, and selection is a
deterministic reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .automaton import Automaton, DiscreteState, pi_kron
from .matfun import Const, Sampled
from .meanfield import (LawEntry, MeanFieldLaw, ModeSolve,
                        build_major_extended, build_minor_extended,
                        edge_end_values, selector_e, solve_mode,
                        terminal_end_values)
from .riccati import (EventSearch, GapSide, find_event_time, stopping_gap,
                      switch_gap)

TOL_MATCH_STEPS = 2  # conditions must share a root within this many grid steps
TIE_REL = 1e-10


@dataclass
class ConditionResult:
    """One optimality condition checked on an edge."""

    name: str  # "major" | "stop:a" | "cont:b" | ...
    search: EventSearch
    binding: bool  # degenerate gaps hold everywhere and do not bind
    zero_at_root: bool | None = None  # matcher vanished at the deciding time


@dataclass
class EdgeStep:
    """Outcome of testing one incoming edge at one stage."""

    from_label: str
    to_label: str
    event: str
    realizable: bool
    t: float | None  # snapped to the grid
    t_refined: float | None
    reason: str
    conditions: list[ConditionResult] = field(default_factory=list)
    source_solve: ModeSolve | None = None


@dataclass
class SwitchSchedule:
    """A realized discrete trajectory with its event times and value."""

    path: tuple[str, ...]
    times: tuple[float, ...]
    value: float
    quad_value: float
    noise_value: float
    solves: dict
    feasibility: tuple[EdgeStep, ...]

    @property
    def n_events(self) -> int:
        return len(self.times)

    def mode_windows(self, T: float):
        bounds = (0.0,) + self.times + (T,)
        return [(lbl, bounds[i], bounds[i + 1])
                for i, lbl in enumerate(self.path)]

    def summary(self, T: float) -> str:
        lines = ["-> ".join(self.path)]
        for (lbl, a, b) in self.mode_windows(T):
            lines.append(f"  {lbl}: [{a:.4g}, {b:.4g})")
        lines.append(f"  value {self.value:.10g} "
                     f"(quadratic {self.quad_value:.10g}, "
                     f"noise {self.noise_value:.10g})")
        return "\n".join(lines)


@dataclass
class EnumerationResult:
    schedules: list
    rejected: list  # (path_labels, EdgeStep)


def _jump_sampled(psi, cost, sol) -> Sampled:
    """Sampled Psi^T Pi(s) Psi + C over the after-solution's half grid."""
    tbl = np.einsum("ij,tjk,kl->til", psi.T, sol.Pi_half, psi) + cost
    return Sampled(sol.t0, sol.h / 2.0, tbl)


def _before_law(aut, edge, ms_after) -> dict:
    """Law tables of the source mode, pointwise through the jump maps.

    At the true event time the before-mode Riccati equals its jump image, so
    evaluating the consistency formulas on those images extends the
    before-mode law to every candidate instant.
    """
    m_b = edge.from_state
    n = aut.n
    sol0 = ms_after.sol_major
    ts_half = sol0.t0 + 0.5 * sol0.h * np.arange(len(sol0.Pi_half))
    fr = aut.fractions(m_b)
    stopper = edge.stopped_pop()
    law = {}
    for k in m_b.active_pops:
        spec = aut.specs[m_b.label].minor(k)
        if k == stopper:
            Pi_b = np.broadcast_to(
                aut.minor_terminal_weight(m_b, k),
                (len(ts_half),) + (aut.minor_dim(m_b),) * 2,
            )
        else:
            psi, cost = edge.psi_minor[k], edge.cost_minor[k]
            Pi_b = np.einsum("ij,tjk,kl->til", psi.T,
                             ms_after.sol_minor[k].Pi_half, psi) + cost
        Sk = spec.B @ np.linalg.solve(spec.R, spec.B.T)
        P11 = Pi_b[:, :n, :n]
        P12 = Pi_b[:, :n, n : 2 * n]
        P13 = Pi_b[:, :n, 2 * n :]
        Ak = spec.A.table(ts_half)
        closed = Ak - np.einsum("ij,tjk->tik", Sk, P11)
        A_bar = (np.einsum("tij,jk->tik", closed, selector_e(m_b, k, n))
                 + pi_kron(fr, spec.F)[None, :, :]
                 - np.einsum("ij,tjk->tik", Sk, P13))
        G_bar = spec.G[None, :, :] - np.einsum("ij,tjk->tik", Sk, P12)
        law[k] = LawEntry(sol0.t0, 0.5 * sol0.h, A_bar, G_bar)
    return law


def edge_gap_functions(aut: Automaton, edge, ms_after: ModeSolve) -> dict:
    """All optimality-gap functions that must share a root on this edge."""
    m_b = edge.from_state
    law_b = _before_law(aut, edge, ms_after)
    major_b = build_major_extended(aut, m_b, law_b)
    major_a = ms_after.major_sys

    gaps = {
        "major": switch_gap(
            edge.psi_major, edge.cost_major,
            GapSide(major_b.A, major_b.P, major_b.S),
            GapSide(major_a.A, major_a.P, major_a.S),
            ms_after.sol_major.pi_fun(),
        )
    }
    if not m_b.active_pops:
        return gaps

    pi0_b = _jump_sampled(edge.psi_major, edge.cost_major, ms_after.sol_major)
    stopper = edge.stopped_pop()
    for k in m_b.active_pops:
        minor_b = build_minor_extended(aut, m_b, k, law_b, pi0_b, major_b)
        side_b = GapSide(minor_b.A, minor_b.P, minor_b.S)
        if k == stopper:
            gaps[f"stop:{k}"] = stopping_gap(
                Const(aut.minor_terminal_weight(m_b, k)), side_b)
        else:
            minor_a = ms_after.minor_sys[k]
            gaps[f"cont:{k}"] = switch_gap(
                edge.psi_minor[k], edge.cost_minor[k], side_b,
                GapSide(minor_a.A, minor_a.P, minor_a.S),
                ms_after.sol_minor[k].pi_fun(),
            )
    return gaps


def _snap(t: float, h: float) -> float:
    return round(t / h) * h


def _vanishes_at(gap, t_star: float, window, h: float) -> bool:
    """Does the gap matrix have a zero at ``t_star`` (within grid accuracy)?

    The yardstick is the gap's own size one matching-tolerance away from the
    root: a simple matrix zero at t_star keeps the centre value well below
    its flanks, while a gap that merely passes nearby stays comparable to
    them.
    """
    lo = max(window[0], t_star - TOL_MATCH_STEPS * h)
    hi = min(window[1], t_star + TOL_MATCH_STEPS * h)
    centre = float(np.linalg.norm(gap.matrix(t_star)))
    flanks = 0.5 * (float(np.linalg.norm(gap.matrix(lo)))
                    + float(np.linalg.norm(gap.matrix(hi))))
    return centre <= 0.5 * flanks + 1e-8


def _test_edge(aut, edge, suffix, T, h, solver_opts) -> EdgeStep:
    """Check one incoming edge against a suffix; find the event time."""
    ms_after = suffix.solves[suffix.labels[0]]
    t_next = suffix.times[0] if suffix.times else T
    step = EdgeStep(edge.from_state.label, edge.to_state.label, edge.event,
                    False, None, None, "")
    if t_next - h < h - 1e-12:
        step.reason = "window empty"
        return step
    window = (h, t_next - h)
    ctx = f"edge {edge.from_state.label}->{edge.to_state.label}"

    gaps = edge_gap_functions(aut, edge, ms_after)
    searches = {name: find_event_time(g, window, h, context=f"{ctx} [{name}]")
                for name, g in gaps.items()}
    for name, sr in searches.items():
        step.conditions.append(
            ConditionResult(name, sr, binding=sr.status != "degenerate"))

    # The condition of the agent whose event this is locates the time; every
    # other condition must hold there too: trivially when degenerate, by a
    # coinciding definite crossing, or by the matrix vanishing at the
    # deciding instant (the equality is what continuity demands of agents
    # that do not choose this event; definite flanks are the chooser's
    # optimality conditions).
    stopper = edge.stopped_pop()
    deciding = f"stop:{stopper}" if stopper else "major"
    lead = searches[deciding]
    if lead.status != "event":
        step.reason = f"{deciding} condition: {lead.status}"
        return step
    t_star = lead.time
    for name, sr in searches.items():
        if name == deciding or sr.status == "degenerate":
            continue
        if sr.status == "event":
            if abs(sr.time - t_star) > TOL_MATCH_STEPS * h:
                step.reason = (f"{name} root {sr.time:.6g} does not match "
                               f"{deciding} root {t_star:.6g}")
                return step
            continue
        if _vanishes_at(gaps[name], t_star, window, h):
            for cond in step.conditions:
                if cond.name == name:
                    cond.zero_at_root = True
            continue
        step.reason = (f"{name} condition: {sr.status} and nonzero at the "
                       f"{deciding} root")
        return step

    t_snap = _snap(t_star, h)
    if not (h - 1e-12 <= t_snap <= t_next - h + 1e-12):
        step.reason = "event time snapped outside the window"
        return step
    end_vals = edge_end_values(aut, edge, ms_after, t_snap)
    source_solve = solve_mode(aut, edge.from_state, 0.0, t_snap, h,
                              end_vals, **solver_opts)
    step.realizable = True
    step.t = t_snap
    step.t_refined = t_star
    step.source_solve = source_solve
    step.reason = "ok"
    return step


@dataclass
class _Suffix:
    labels: tuple
    times: tuple
    solves: dict
    feasibility: tuple


def backward_step(aut: Automaton, suffix: _Suffix, T: float, h: float,
                  **solver_opts) -> list[EdgeStep]:
    """Test every incoming edge of the suffix's head state.

    Returns one EdgeStep per edge; realizable entries carry the event time
    and the freshly solved source-mode segment.
    """
    head = aut.states[suffix.labels[0]]
    return [_test_edge(aut, e, suffix, T, h, solver_opts)
            for e in aut.in_edges(head)]


def enumerate_schedules(aut: Automaton, T: float, h: float, x0_ex0,
                        **solver_opts) -> EnumerationResult:
    """Explore every root-anchored discrete trajectory and value it.

    Truncated paths (remaining in any reachable state until the horizon) are
    included; the stay-at-source schedule always exists.  Infeasible
    extensions are reported with the condition that failed.
    """
    x0_ex0 = np.asarray(x0_ex0, dtype=float)
    memo: dict = {}
    rejected: list = []

    def suffixes(state: DiscreteState):
        if state.label in memo:
            return memo[state.label]
        ms = solve_mode(aut, state, 0.0, T, h,
                        terminal_end_values(aut, state), **solver_opts)
        out = [_Suffix((state.label,), (), {state.label: ms}, ())]
        for edge in aut.out_edges(state):
            for sfx in suffixes(edge.to_state):
                step = _test_edge(aut, edge, sfx, T, h, solver_opts)
                if not step.realizable:
                    rejected.append(((state.label,) + sfx.labels, step))
                    continue
                out.append(_Suffix(
                    (state.label,) + sfx.labels,
                    (step.t,) + sfx.times,
                    {state.label: step.source_solve, **sfx.solves},
                    (step,) + sfx.feasibility,
                ))
        memo[state.label] = out
        return out

    source = aut.states["q1_ab"]
    schedules = []
    for sfx in suffixes(source):
        quad, noise = _schedule_value(aut, sfx, T, x0_ex0)
        schedules.append(SwitchSchedule(
            path=sfx.labels, times=sfx.times, value=quad + noise,
            quad_value=quad, noise_value=noise, solves=sfx.solves,
            feasibility=sfx.feasibility,
        ))
    return EnumerationResult(schedules, rejected)


def _schedule_value(aut, sfx, T, x0_ex0):
    """Expected major cost: quadratic form at t=0 plus the noise integral."""
    first = sfx.solves[sfx.labels[0]]
    d0 = aut.major_dim(aut.states[sfx.labels[0]])
    if x0_ex0.shape != (d0,):
        raise ValueError(f"initial extended state must have length {d0}")
    quad = float(x0_ex0 @ first.sol_major.Pi[0] @ x0_ex0)
    noise = 0.0
    bounds = (0.0,) + sfx.times + (T,)
    for i, lbl in enumerate(sfx.labels):
        ms = sfx.solves[lbl]
        D = aut.major_diffusion(aut.states[lbl])
        noise += ms.sol_major.trace_noise_cost(D, bounds[i], bounds[i + 1])
    return quad, noise


def stay_schedule(aut: Automaton, T: float, h: float, x0_ex0,
                  **solver_opts) -> SwitchSchedule:
    """The always-available schedule: remain in the source state until T."""
    source = aut.states["q1_ab"]
    ms = solve_mode(aut, source, 0.0, T, h, terminal_end_values(aut, source),
                    **solver_opts)
    sfx = _Suffix((source.label,), (), {source.label: ms}, ())
    quad, noise = _schedule_value(aut, sfx, T, np.asarray(x0_ex0, dtype=float))
    return SwitchSchedule(sfx.labels, sfx.times, quad + noise, quad, noise,
                          sfx.solves, ())


def select_optimal(schedules) -> SwitchSchedule:
    """Minimal expected major cost; near-ties resolve to fewer events."""
    if not schedules:
        raise ValueError("no candidate schedules (the stay-at-source "
                         "schedule should always exist)")
    best = min(schedules, key=lambda s: s.value)
    scale = max(1.0, abs(best.value))
    ties = [s for s in schedules
            if abs(s.value - best.value) <= TIE_REL * scale]
    return min(ties, key=lambda s: s.n_events)


def law_from_schedule(aut, schedule: SwitchSchedule) -> MeanFieldLaw:
    return MeanFieldLaw(
        entries={lbl: ms.law for lbl, ms in schedule.solves.items()},
        fractions={lbl: aut.fractions(ms.state)
                   for lbl, ms in schedule.solves.items()},
    )


def schedule_report(result: EnumerationResult, chosen: SwitchSchedule,
                    T: float) -> str:
    """Structured-text report: chosen schedule with per-event conditions,
    all candidates, and the rejected extensions with the failing reason."""
    lines = ["# selected schedule", chosen.summary(T)]
    for step in chosen.feasibility:
        lines.append(f"  event {step.from_label}->{step.to_label} "
                     f"({step.event}) at t={step.t:.6g}")
        for cond in step.conditions:
            held = ("root at "
                    f"{cond.search.time:.6g}" if cond.search.time is not None
                    else cond.search.status)
            lines.append(f"    {cond.name}: {held}")
    lines.append("")
    lines.append("# candidates")
    for s in sorted(result.schedules, key=lambda s: s.value):
        marker = "*" if s is chosen else " "
        lines.append(f"{marker} value={s.value:.10g} events={s.n_events} "
                     f"path={'->'.join(s.path)} "
                     f"times={','.join(f'{t:.6g}' for t in s.times)}")
    lines.append("")
    lines.append("# rejected extensions")
    if not result.rejected:
        lines.append("(none)")
    for path, step in result.rejected:
        lines.append(f"  path={'->'.join(path)} edge={step.from_label}->"
                     f"{step.to_label} reason: {step.reason}")
    return "\n".join(lines) + "\n"
