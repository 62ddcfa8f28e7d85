"""Per-mode extended systems and the mean-field consistency fixed point.

Each agent class in each discrete state gets a standalone LQG problem on an
extended state: [x0; xbar] for the major, [x_i; x0; xbar] for a minor.  The
coupling matrices (A_bar, G_bar) that close the mean-field dynamics are the
unknowns of a damped Picard iteration: solve the major Riccati, then each
minor Riccati, re-read the law from the minor solution blocks, damp, repeat.

The minor Riccati's own-state block obeys the decoupled n x n equation
exactly (the extended drift is block triangular with a zero column under the
own state), which supplies the zero-coupling initial law without iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .automaton import Automaton, DiscreteState, pi_kron
from .errors import ConsistencyError, DimensionError
from .matfun import Blocks, Const, MatrixFunction, Sampled
from .riccati import RiccatiSolution, apply_jump_condition, integrate_riccati


class ClosedLoop(MatrixFunction):
    """A(t) - S Pi(t): drift of a system under its Riccati feedback."""

    def __init__(self, A: MatrixFunction, S: np.ndarray, Pi: MatrixFunction):
        self.A = A
        self.S = np.asarray(S, dtype=float)
        self.Pi = Pi
        self.shape = A.shape

    def table(self, ts):
        return self.A.table(ts) - np.einsum(
            "ij,tjk->tik", self.S, self.Pi.table(ts)
        )


@dataclass
class ExtendedSystem:
    """One agent class in one discrete state as a standalone LQG problem."""

    label: str
    agent: str
    A: MatrixFunction
    B: np.ndarray
    D: np.ndarray
    P: np.ndarray
    R: np.ndarray
    P_bar: np.ndarray
    M: np.ndarray = None
    S: np.ndarray = field(init=False)

    def __post_init__(self):
        d = self.A.shape[0]
        if self.B.shape[0] != d or self.P.shape != (d, d):
            raise DimensionError("extended system blocks are inconsistent")
        if self.M is None:
            self.M = np.zeros(d)
        self.S = self.B @ np.linalg.solve(self.R, self.B.T)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def selector_e(state: DiscreteState, k: str, n: int) -> np.ndarray:
    """Map from the stacked mean field of ``state`` to type k's component."""
    if k not in state.active_pops:
        raise KeyError(f"type {k!r} not active in {state.label}")
    if state.n_active == 1:
        return np.eye(n)
    eye, zero = np.eye(n), np.zeros((n, n))
    return np.hstack([eye, zero]) if k == "a" else np.hstack([zero, eye])


@dataclass
class LawEntry:
    """Time-indexed (A_bar, G_bar) of one minor type on one mode window."""

    t0: float
    dt: float
    A_bar: np.ndarray  # (L, n, w)
    G_bar: np.ndarray  # (L, n, n)

    @property
    def A_bar_fun(self) -> Sampled:
        return Sampled(self.t0, self.dt, self.A_bar)

    @property
    def G_bar_fun(self) -> Sampled:
        return Sampled(self.t0, self.dt, self.G_bar)


@dataclass
class MeanFieldLaw:
    """The consistency fixed point: per-mode law tables plus fractions.

    The drift offset of the mean-field equation is identically zero (last
    line of the consistency system), so only (A_bar, G_bar) are stored.
    """

    entries: dict  # label -> {type -> LawEntry}
    fractions: dict  # label -> tuple of per-type fractions

    def entry(self, label: str, k: str) -> LawEntry:
        return self.entries[label][k]


def build_major_extended(aut: Automaton, state: DiscreteState,
                         law_entries: dict) -> ExtendedSystem:
    """Extended major system on one mode given that mode's law tables."""
    spec = aut.specs[state.label].major
    n, m = aut.n, aut.m
    w = aut.xbar_width(state)
    if state.n_active == 0:
        A = spec.A
    else:
        for k in state.active_pops:
            if law_entries[k].A_bar.shape[2] != w:
                raise DimensionError(
                    f"law width {law_entries[k].A_bar.shape[2]} does not "
                    f"match mode {state.label} (expected {w})"
                )
        fr = aut.fractions(state)
        A = Blocks([
            [spec.A, Const(pi_kron(fr, spec.F))],
            [Blocks([[law_entries[k].G_bar_fun] for k in state.active_pops]),
             Blocks([[law_entries[k].A_bar_fun] for k in state.active_pops])],
        ])
    B = np.vstack([spec.B, np.zeros((w, m))])
    return ExtendedSystem(
        label=state.label, agent="major", A=A, B=B,
        D=aut.major_diffusion(state), P=aut.major_running_weight(state),
        R=spec.R, P_bar=aut.major_terminal_weight(state),
    )


def build_minor_extended(aut: Automaton, state: DiscreteState, k: str,
                         law_entries: dict, pi0: MatrixFunction,
                         major_sys: ExtendedSystem | None = None,
                         ) -> ExtendedSystem:
    """Extended minor system; the lower block is the major's closed loop.

    ``pi0`` samples the major Riccati solution on this mode, so the extended
    drift is time varying even for constant data.
    """
    spec = aut.specs[state.label].minor(k)
    n, m = aut.n, aut.m
    if major_sys is None:
        major_sys = build_major_extended(aut, state, law_entries)
    fr = aut.fractions(state)
    top_right = Const(np.hstack([spec.G, pi_kron(fr, spec.F)]))
    A = Blocks([
        [spec.A, top_right],
        [None, ClosedLoop(major_sys.A, major_sys.S, pi0)],
    ])
    B = np.vstack([spec.B, np.zeros((major_sys.dim, m))])
    return ExtendedSystem(
        label=state.label, agent=k, A=A, B=B,
        D=aut.minor_diffusion(state, k), P=aut.minor_running_weight(state, k),
        R=spec.R, P_bar=aut.minor_terminal_weight(state, k),
    )


@dataclass
class ModeSolve:
    """Converged per-mode data: law tables, systems and Riccati solutions."""

    state: DiscreteState
    t0: float
    t1: float
    h: float
    law: dict  # type -> LawEntry
    major_sys: ExtendedSystem
    sol_major: RiccatiSolution
    minor_sys: dict  # type -> ExtendedSystem
    sol_minor: dict  # type -> RiccatiSolution
    iterations: int
    residuals: list


def _law_candidate(n, spec, Sk, Pi_half, Ak_half, e_k, fr):
    """(A_bar, G_bar) tables implied by a minor Riccati solution."""
    P11 = Pi_half[:, :n, :n]
    P12 = Pi_half[:, :n, n : 2 * n]
    P13 = Pi_half[:, :n, 2 * n :]
    closed = Ak_half - np.einsum("ij,tjk->tik", Sk, P11)
    A_bar = (np.einsum("tij,jk->tik", closed, e_k)
             + pi_kron(fr, spec.F)[None, :, :]
             - np.einsum("ij,tjk->tik", Sk, P13))
    G_bar = spec.G[None, :, :] - np.einsum("ij,tjk->tik", Sk, P12)
    return A_bar, G_bar


def _quarter(half_tab):
    """Refine a half-grid table to the RK4 stage grid (quarter nodes)."""
    L = half_tab.shape[0]
    out = np.empty((2 * L - 1,) + half_tab.shape[1:])
    out[0::2] = half_tab
    out[1::2] = 0.5 * (half_tab[:-1] + half_tab[1:])
    return out


class _OwnBlock:
    """Decoupled n x n problem of one minor type (its own-state Riccati)."""

    def __init__(self, spec, label):
        self.A = spec.A
        self.B = spec.B
        self.R = spec.R
        self.P = spec.P
        self.S = spec.B @ np.linalg.solve(spec.R, spec.B.T)
        self.label = label


class _QuadData:
    """Constant quadratic data of an extended system (A supplied per sweep)."""

    def __init__(self, label, B, R, P):
        self.label = label
        self.B = B
        self.R = R
        self.P = P
        self.S = B @ np.linalg.solve(R, B.T)
        self.A = None


def solve_mode(aut: Automaton, state: DiscreteState, t_lo: float, t_hi: float,
               h: float, end_values: dict, *, theta: float = 0.5,
               tol: float = 1e-9, max_iter: int = 200,
               psd_check: bool = True, law0: dict | None = None) -> ModeSolve:
    """Damped Picard iteration for the law of a single mode window.

    ``end_values`` fixes the Riccati boundary data at ``t_hi`` for the major
    and each active type (jump images from the next mode, or terminal
    weights).  Backward quantities depend only on later times, so the law of
    this mode is independent of anything before ``t_lo``.  ``law0`` overrides
    the zero-coupling initial law (the fixed point does not depend on it).
    """
    n = aut.n
    active = state.active_pops
    K = int(round((t_hi - t_lo) / h))
    ts_half = t_lo + 0.5 * h * np.arange(2 * K + 1)
    ts_q = t_lo + 0.25 * h * np.arange(4 * K + 1)
    fr = aut.fractions(state)
    spec0 = aut.specs[state.label].major
    specs = {k: aut.specs[state.label].minor(k) for k in active}
    e_k = {k: selector_e(state, k, n) for k in active}
    d0 = aut.major_dim(state)
    w = aut.xbar_width(state)

    # Stage samples of the data matrices (assembled once).
    A0_spec_q = spec0.A.table(ts_q)
    piF0 = pi_kron(fr, spec0.F)
    Ak_q = {k: specs[k].A.table(ts_q) for k in active}
    Ak_half = {k: Ak_q[k][0::2] for k in active}
    top_right = {k: np.hstack([specs[k].G, pi_kron(fr, specs[k].F)])
                 for k in active}
    Sk = {k: specs[k].B @ np.linalg.solve(specs[k].R, specs[k].B.T)
          for k in active}

    # Constant quadratic data; the public systems are rebuilt at exit with
    # the converged law.
    quad0 = _QuadData(f"{state.label}/major",
                      np.vstack([spec0.B, np.zeros((w, aut.m))]),
                      spec0.R, aut.major_running_weight(state))
    S0 = quad0.S
    quad_k = {k: _QuadData(f"{state.label}/{k}",
                           np.vstack([specs[k].B, np.zeros((d0, aut.m))]),
                           specs[k].R, aut.minor_running_weight(state, k))
              for k in active}

    # Zero-coupling initial law from the exact own-state block.
    if law0 is not None:
        law = dict(law0)
    else:
        law = {}
        for k in active:
            own = _OwnBlock(specs[k], f"{state.label}/{k}/own")
            sol11 = integrate_riccati(own, t_hi, end_values[k][:n, :n],
                                      t_lo, h)
            closed = Ak_half[k] - np.einsum("ij,tjk->tik", Sk[k],
                                            sol11.Pi_half)
            A_bar0 = np.einsum("tij,jk->tik", closed, e_k[k])
            law[k] = LawEntry(t_lo, 0.5 * h, A_bar0,
                              np.zeros((2 * K + 1, n, n)))

    residuals = []
    sol_major = None
    sol_minor = {}
    mid = K  # midpoint of the half grid
    for it in range(1, max_iter + 1):
        A0_tab = np.empty((len(ts_q), d0, d0))
        A0_tab[:, :n, :n] = A0_spec_q
        if w:
            A0_tab[:, :n, n:] = piF0
            for row, k in enumerate(active):
                r0 = n * (1 + row)
                A0_tab[:, r0 : r0 + n, :n] = _quarter(law[k].G_bar)
                A0_tab[:, r0 : r0 + n, n:] = _quarter(law[k].A_bar)
        sol_major = integrate_riccati(quad0, t_hi, end_values["major"],
                                      t_lo, h, A_stages=A0_tab[::-1])
        probe = 0.0
        full = 0.0
        new_law = {}
        if active:
            Acl_q = A0_tab - np.einsum(
                "ij,tjk->tik", S0, _quarter(sol_major.Pi_half))
        for k in active:
            dk = n + d0
            Ak_tab = np.zeros((len(ts_q), dk, dk))
            Ak_tab[:, :n, :n] = Ak_q[k]
            Ak_tab[:, :n, n:] = top_right[k]
            Ak_tab[:, n:, n:] = Acl_q
            sol_minor[k] = integrate_riccati(quad_k[k], t_hi, end_values[k],
                                             t_lo, h, A_stages=Ak_tab[::-1])
            A_cand, G_cand = _law_candidate(n, specs[k], Sk[k],
                                            sol_minor[k].Pi_half,
                                            Ak_half[k], e_k[k], fr)
            dA = theta * (A_cand - law[k].A_bar)
            dG = theta * (G_cand - law[k].G_bar)
            new_law[k] = LawEntry(t_lo, 0.5 * h, law[k].A_bar + dA,
                                  law[k].G_bar + dG)
            probe += np.linalg.norm(dA[mid]) + np.linalg.norm(dG[mid])
            node_norm = (np.linalg.norm(dA, axis=(1, 2))
                         + np.linalg.norm(dG, axis=(1, 2)))
            full = max(full, float(node_norm.max()))
        law = new_law if active else law
        residuals.append(probe if active else 0.0)
        if not active or (probe < tol and full < tol):
            break
    else:
        raise ConsistencyError(residuals, tol)

    if psd_check:
        for sol in [sol_major, *sol_minor.values()]:
            scale = max(1.0, float(np.max(np.abs(sol.Pi))))
            if np.linalg.eigvalsh(sol.Pi)[:, 0].min() < -1e-8 * scale:
                raise ConsistencyError(residuals + [np.inf], tol)

    # Rebuild the public systems around the converged law so downstream
    # consumers (gap functions, exports) see consistent coefficients.
    major_sys = build_major_extended(aut, state, law)
    sol_major.sys = major_sys
    minor_sys = {}
    pi0 = sol_major.pi_fun()
    for k in active:
        minor_sys[k] = build_minor_extended(aut, state, k, law, pi0,
                                            major_sys)
        sol_minor[k].sys = minor_sys[k]

    return ModeSolve(state, float(t_lo), float(t_hi), h, law, major_sys,
                     sol_major, minor_sys, sol_minor,
                     len(residuals), residuals)


def terminal_end_values(aut: Automaton, state: DiscreteState) -> dict:
    """Boundary data when the horizon ends in ``state``."""
    out = {"major": aut.major_horizon_weight(state)}
    for k in state.active_pops:
        out[k] = aut.minor_terminal_weight(state, k)
    return out


def edge_end_values(aut: Automaton, edge, solve_after: ModeSolve,
                    t_event: float) -> dict:
    """Boundary data for the source mode of ``edge`` at the event time.

    Continuing classes take the jump image of the after-mode solution; the
    stopping subpopulation's Riccati terminates at its terminal-weight
    projection.
    """
    out = {"major": apply_jump_condition(
        solve_after.sol_major.pi_at(t_event), edge, "major")}
    stopper = edge.stopped_pop()
    for k in edge.from_state.active_pops:
        if k == stopper:
            out[k] = aut.minor_terminal_weight(edge.from_state, k)
        else:
            out[k] = apply_jump_condition(
                solve_after.sol_minor[k].pi_at(t_event), edge, k)
    return out


def solve_consistency(aut: Automaton, path, times, T: float, h: float, *,
                      theta: float = 0.5, tol: float = 1e-9,
                      max_iter: int = 200, psd_check: bool = True):
    """Solve the consistency fixed point along one schedule hypothesis.

    ``path`` is the ordered list of mode labels, ``times`` the event times
    between them (grid aligned).  Modes are solved last to first: each mode's
    boundary data is the jump image of the next mode's solution, so a single
    backward pass composes the per-mode fixed points.

    Returns ``(law, solves, residual)`` where ``solves`` maps labels to
    ModeSolve and ``residual`` is the worst final per-mode residual.
    """
    path = list(path)
    times = [float(t) for t in times]
    if len(times) != len(path) - 1:
        raise ValueError("need one event time per transition")
    if any(t2 - t1 < h - 1e-9 for t1, t2 in zip([0.0] + times, times + [T])):
        raise ValueError("every mode interval must be non-empty")

    solves = {}
    end_values = terminal_end_values(aut, aut.states[path[-1]])
    for j in range(len(path) - 1, -1, -1):
        st = aut.states[path[j]]
        t_lo = 0.0 if j == 0 else times[j - 1]
        t_hi = times[j] if j < len(times) else T
        ms = solve_mode(aut, st, t_lo, t_hi, h, end_values, theta=theta,
                        tol=tol, max_iter=max_iter, psd_check=psd_check)
        solves[path[j]] = ms
        if j > 0:
            edge = aut.edge(path[j - 1], path[j])
            end_values = edge_end_values(aut, edge, ms, t_lo)

    law = MeanFieldLaw(
        entries={lbl: ms.law for lbl, ms in solves.items()},
        fractions={lbl: aut.fractions(ms.state) for lbl, ms in solves.items()},
    )
    residual = max((ms.residuals[-1] if ms.residuals else 0.0)
                   for ms in solves.values())
    return law, solves, residual
