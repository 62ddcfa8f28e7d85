"""Finite-population Monte Carlo under the solved hybrid feedback laws.

Dynamics are Euler-Maruyama on the scenario grid.  Controls are the Riccati
feedback applied to each agent's extended state, whose mean-field coordinates
are the solved law propagated alongside the run (driven by the realized major
state), not the empirical average; the empirical average of the active minors
is what enters everyone's dynamics and running costs.  Whole subpopulations
stop at the scheduled instants: their terminal cost is charged at the stop,
their states freeze, and they leave the average afterwards.

Per-run randomness comes from numpy SeedSequence children: run j uses
``SeedSequence(seed).spawn(runs)[j]``, drawing first the minor initial states
(type a then type b) and then the per-step increments as one
(steps, 1 + N, r) block.  Identical (seed, config) therefore reproduce runs
bit for bit, and variants sharing the seed see common random numbers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .automaton import Automaton
from .errors import InstabilityError
from .riccati import integrate_riccati

MAX_BLOCK_BYTES = 4 * 10**8


class _ProbeQuad:
    """Constant quadratic data of the probe's tracking problem."""

    def __init__(self, label, B, R, P, S):
        self.label = label
        self.B = B
        self.R = R
        self.P = P
        self.S = S
        self.A = None


class FallbackWarning(UserWarning):
    """A documented fallback path was taken (fails under --strict)."""


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


@dataclass
class SimConfig:
    """Population sizes, horizon, discretisation and randomness."""

    N_a: int
    N_b: int
    T: float
    dt: float
    seed: int
    runs: int
    x0: np.ndarray
    minor_mean: dict  # type -> (n,) mean of the i.i.d. initial distribution
    minor_cov: dict  # type -> (n, n) covariance

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.minor_mean = {k: np.asarray(v, dtype=float)
                           for k, v in self.minor_mean.items()}
        self.minor_cov = {k: np.asarray(v, dtype=float)
                          for k, v in self.minor_cov.items()}
        if self.N_a + self.N_b < 1:
            raise ValueError("need at least one minor agent")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("dt must divide T")
        if self.runs < 1:
            raise ValueError("runs must be positive")

    @property
    def N(self) -> int:
        return self.N_a + self.N_b

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_counts(self, N_a: int, N_b: int) -> "SimConfig":
        return SimConfig(N_a, N_b, self.T, self.dt, self.seed, self.runs,
                         self.x0, self.minor_mean, self.minor_cov)


@dataclass
class TrajectoryRecord:
    """Full per-agent series of the first run."""

    grid: np.ndarray
    types: list  # per agent: "major" | "a" | "b"
    states: np.ndarray  # (K+1, 1+N, n)
    controls: np.ndarray  # (K+1, 1+N, m)
    active: np.ndarray  # (K+1, 1+N) bool


@dataclass(eq=False)
class SimulationResult:
    grid: np.ndarray
    cost_major: np.ndarray  # (runs,)
    cost_minor: np.ndarray  # (runs, N)
    x0_series: np.ndarray  # (runs, K+1, n)
    mean_series: np.ndarray  # (runs, K+1, n) average used at each node
    xbar_pool_series: np.ndarray  # (runs, K+1, n) solved pooled mean field
    xbar_series: dict  # type -> (runs, K+1, n) solved per-type mean field
    stop_refs: dict  # stop node -> (runs, n) pre-stop average reference
    sumsq: np.ndarray  # (1+N, K+1) accumulated ||x||^2 over runs
    runs: int
    types: list
    probe: tuple | None = None
    probe_noise: np.ndarray | None = None  # (runs, K, r)
    probe_init: np.ndarray | None = None  # (runs, n)
    probe_traj: np.ndarray | None = None  # (runs, K+1, n)
    record: TrajectoryRecord | None = None

    def second_moments(self) -> np.ndarray:
        """Monte Carlo E||x_i(t)||^2, shape (1+N, K+1)."""
        return self.sumsq / self.runs


@dataclass(eq=False)
class _ModeTables:
    """Node-indexed tables of one schedule segment."""

    state: object
    lo: int
    hi: int
    gain0: np.ndarray
    gain_minor: dict
    A0: np.ndarray
    law_A: dict
    law_G: dict
    fractions: tuple


def _quad(x, W):
    return np.einsum("...i,ij,...j->...", x, W, x)


def _timeline(aut, schedule, config):
    K = config.steps
    h = config.dt
    nodes = []
    for t in schedule.times:
        node = int(round(t / h))
        if abs(node * h - t) > 1e-9:
            warnings.warn(
                f"event time {t:.6g} snapped to grid node {node * h:.6g}",
                FallbackWarning, stacklevel=3)
        nodes.append(node)
    bounds = [0] + nodes + [K]
    tables = []
    for j, lbl in enumerate(schedule.path):
        st = aut.states[lbl]
        ms = schedule.solves[lbl]
        lo, hi = bounds[j], bounds[j + 1]
        ts = h * np.arange(lo, hi + 1)
        off = int(round((lo * h - ms.sol_major.t0) / h))
        sl = slice(off, off + (hi - lo) + 1)
        tables.append(_ModeTables(
            state=st, lo=lo, hi=hi,
            gain0=ms.sol_major.gain[sl],
            gain_minor={k: ms.sol_minor[k].gain[sl] for k in st.active_pops},
            A0=aut.specs[lbl].major.A.table(ts),
            law_A={k: ms.law[k].A_bar_fun.table(ts) for k in st.active_pops},
            law_G={k: ms.law[k].G_bar_fun.table(ts) for k in st.active_pops},
            fractions=aut.fractions(st),
        ))
    return tables, bounds


def simulate(aut: Automaton, schedule, config: SimConfig, *,
             use_empirical: bool = True, record: bool = False,
             probe: tuple | None = None, check_every: int = 25,
             ) -> SimulationResult:
    """Run the finite population under the schedule's feedback laws.

    ``use_empirical=False`` replaces the empirical minor average with the
    solved pooled mean field everywhere (the infinite-population proxy).
    ``probe=(type, index)`` retains that agent's own noise and initial state
    so a best-response re-solve can replay it.  ``record`` keeps the first
    run's full trajectories.
    """
    n, m, r = aut.n, aut.m, aut.r
    K = config.steps
    h = config.dt
    N_a, N_b, N = config.N_a, config.N_b, config.N
    if abs(N_a / N - aut.pi.pi_a) > 1.0 / N + 1e-9:
        warnings.warn(
            f"empirical fraction {N_a / N:.4g} differs from the modelled "
            f"pi_a={aut.pi.pi_a:.4g}", FallbackWarning, stacklevel=2)

    tables, bounds = _timeline(aut, schedule, config)
    mode_of_step = np.empty(K, dtype=np.intp)
    for j, mt in enumerate(tables):
        mode_of_step[mt.lo : mt.hi] = j
    stop_events = {}  # node -> type that stops there
    for j in range(1, len(tables)):
        stopped = aut.edge(schedule.path[j - 1], schedule.path[j]).stopped_pop()
        if stopped is not None:
            stop_events[tables[j].lo] = stopped

    specs_minor = {k: aut.specs["q1_ab"].minor(k) for k in ("a", "b")}
    spec_major = {lbl: aut.specs[lbl].major for lbl in schedule.path}
    Ak_tab = {k: specs_minor[k].A.table(h * np.arange(K + 1))
              for k in ("a", "b")}
    chol = {k: _cov_factor(config.minor_cov[k]) for k in ("a", "b")}
    type_slices = {"a": slice(0, N_a), "b": slice(N_a, N)}
    types = ["major"] + ["a"] * N_a + ["b"] * N_b

    probe_minor_idx = None
    if probe is not None:
        probe_minor_idx = type_slices[probe[0]].start + probe[1]

    out = SimulationResult(
        grid=h * np.arange(K + 1),
        cost_major=np.zeros(config.runs),
        cost_minor=np.zeros((config.runs, N)),
        x0_series=np.zeros((config.runs, K + 1, n)),
        mean_series=np.zeros((config.runs, K + 1, n)),
        xbar_pool_series=np.zeros((config.runs, K + 1, n)),
        xbar_series={k: np.zeros((config.runs, K + 1, n)) for k in ("a", "b")},
        stop_refs={node: np.zeros((config.runs, n)) for node in stop_events},
        sumsq=np.zeros((1 + N, K + 1)),
        runs=config.runs,
        types=types,
        probe=probe,
        probe_noise=(np.zeros((config.runs, K, r)) if probe else None),
        probe_init=(np.zeros((config.runs, n)) if probe else None),
        probe_traj=(np.zeros((config.runs, K + 1, n)) if probe else None),
    )

    children = np.random.SeedSequence(config.seed).spawn(config.runs)
    block = max(1, int(MAX_BLOCK_BYTES / (K * (1 + N) * r * 8)))
    sqdt = math.sqrt(h)

    for b0 in range(0, config.runs, block):
        b1 = min(b0 + block, config.runs)
        B = b1 - b0
        Z = np.empty((B, K, 1 + N, r))
        X = np.empty((B, N, n))
        for bi, child in enumerate(children[b0:b1]):
            rng = np.random.default_rng(child)
            for k in ("a", "b"):
                sl = type_slices[k]
                z0 = rng.standard_normal((sl.stop - sl.start, n))
                X[bi, sl] = config.minor_mean[k] + z0 @ chol[k].T
            Z[bi] = rng.standard_normal((K, 1 + N, r))
        x0 = np.broadcast_to(config.x0, (B, n)).copy()
        xbar = {k: np.broadcast_to(config.minor_mean[k], (B, n)).copy()
                for k in ("a", "b")}
        if probe is not None:
            out.probe_init[b0:b1] = X[:, probe_minor_idx]
            out.probe_noise[b0:b1] = Z[:, :, 1 + probe_minor_idx, :]

        recording = record and b0 == 0
        if recording:
            rec_states = np.zeros((K + 1, 1 + N, n))
            rec_controls = np.zeros((K + 1, 1 + N, m))
            rec_active = np.zeros((K + 1, 1 + N), dtype=bool)

        for i in range(K + 1):
            mt = tables[mode_of_step[i]] if i < K else tables[-1]
            st = mt.state
            t_node = i - mt.lo

            if i in stop_events:
                k_stop = stop_events[i]
                prev = tables[mode_of_step[i - 1]].state
                cols = [type_slices[k] for k in prev.active_pops]
                xavg_pre = np.concatenate(
                    [X[:, c] for c in cols], axis=1).mean(axis=1)
                pool_pre = sum(
                    f * xbar[k] for f, k in
                    zip(aut.fractions(prev), prev.active_pops))
                ref_pre = xavg_pre if use_empirical else pool_pre
                out.stop_refs[i][b0:b1] = ref_pre
                spec = specs_minor[k_stop]
                sl = type_slices[k_stop]
                track = X[:, sl] - (x0 @ spec.H1.T
                                    + ref_pre @ spec.H2.T)[:, None, :]
                out.cost_minor[b0:b1, sl] += _quad(track, spec.P_bar)

            if st.n_active:
                cols = [type_slices[k] for k in st.active_pops]
                xavg = np.concatenate(
                    [X[:, c] for c in cols], axis=1).mean(axis=1)
                pool = sum(f * xbar[k]
                           for f, k in zip(mt.fractions, st.active_pops))
                xbar_stack = np.concatenate(
                    [xbar[k] for k in st.active_pops], axis=1)
            else:
                xavg = np.zeros((B, n))
                pool = np.zeros((B, n))
                xbar_stack = np.zeros((B, 0))
            xref = xavg if use_empirical else pool

            out.x0_series[b0:b1, i] = x0
            out.mean_series[b0:b1, i] = xref
            out.xbar_pool_series[b0:b1, i] = pool
            out.sumsq[0, i] += np.sum(x0 * x0)
            out.sumsq[1:, i] += np.einsum("bjn,bjn->j", X, X)
            for k in st.active_pops:
                out.xbar_series[k][b0:b1, i] = xbar[k]
            if probe is not None:
                out.probe_traj[b0:b1, i] = X[:, probe_minor_idx]

            x0ex = np.concatenate([x0, xbar_stack], axis=1)
            u0 = -x0ex @ mt.gain0[t_node].T
            U = {}
            for k in st.active_pops:
                g = mt.gain_minor[k][t_node]
                offset = x0 @ g[:, n : 2 * n].T + xbar_stack @ g[:, 2 * n :].T
                U[k] = -(X[:, type_slices[k]] @ g[:, :n].T
                         + offset[:, None, :])

            if recording:
                rec_states[i, 0] = x0[0]
                rec_states[i, 1:] = X[0]
                rec_active[i, 0] = True
                rec_controls[i, 0] = u0[0]
                for k in st.active_pops:
                    sl = type_slices[k]
                    rec_active[i, 1 + sl.start : 1 + sl.stop] = True
                    rec_controls[i, 1 + sl.start : 1 + sl.stop] = U[k][0]

            sp0 = spec_major[st.label]
            if i == K:
                out.cost_major[b0:b1] += _quad(x0, sp0.P_bar)
                for k in st.active_pops:
                    spec = specs_minor[k]
                    track = X[:, type_slices[k]] - (
                        x0 @ spec.H1.T + xref @ spec.H2.T)[:, None, :]
                    out.cost_minor[b0:b1, type_slices[k]] += _quad(
                        track, spec.P_bar)
                break

            # running costs, left endpoint
            track0 = x0 - xref @ sp0.H.T
            out.cost_major[b0:b1] += (_quad(track0, sp0.P)
                                      + _quad(u0, sp0.R)) * h
            for k in st.active_pops:
                spec = specs_minor[k]
                track = X[:, type_slices[k]] - (
                    x0 @ spec.H1.T + xref @ spec.H2.T)[:, None, :]
                out.cost_minor[b0:b1, type_slices[k]] += (
                    _quad(track, spec.P) + _quad(U[k], spec.R)) * h

            # dynamics (minors and the mean field read the pre-update x0)
            xi = Z[:, i]
            x0_new = (x0 + (x0 @ mt.A0[t_node].T + u0 @ sp0.B.T
                            + xref @ sp0.F.T) * h
                      + (xi[:, 0] @ sp0.D.T) * sqdt)
            for k in st.active_pops:
                spec = specs_minor[k]
                sl = type_slices[k]
                aff = x0 @ spec.G.T + xref @ spec.F.T
                drift = (X[:, sl] @ Ak_tab[k][i].T + U[k] @ spec.B.T
                         + aff[:, None, :])
                X[:, sl] = (X[:, sl] + drift * h
                            + (xi[:, 1 + sl.start : 1 + sl.stop]
                               @ spec.D.T) * sqdt)
            for k in st.active_pops:
                xbar[k] = xbar[k] + (xbar_stack @ mt.law_A[k][t_node].T
                                     + x0 @ mt.law_G[k][t_node].T) * h
            x0 = x0_new

            if i % check_every == 0 or (i + 1) in stop_events or i == K - 1:
                if not np.isfinite(x0).all():
                    raise InstabilityError("major", i, i * h)
                if not np.isfinite(X).all():
                    bad = int(np.argwhere(
                        ~np.isfinite(X).all(axis=2))[0][1])
                    raise InstabilityError(f"minor #{bad}", i, i * h)

        if recording:
            out.record = TrajectoryRecord(out.grid, types, rec_states,
                                          rec_controls, rec_active)
    return out


@dataclass
class NashRow:
    N: int
    J_eq: float
    J_dev: float
    epsilon: float
    stderr: float
    stderr_eq: float


@dataclass
class NashReport:
    """Per-N equilibrium cost, best-deviation cost and epsilon gap."""

    rows: list
    exact_mean_row: NashRow | None = None


def _probe_timeline(aut, schedule, config, k):
    """Per-node active minor counts and the probe type's stop node."""
    K = config.steps
    h = config.dt
    bounds = [0] + [int(round(t / h)) for t in schedule.times] + [K]
    counts = np.zeros(K + 1)
    stop_node = K
    pop_count = {"a": config.N_a, "b": config.N_b}
    for j, lbl in enumerate(schedule.path):
        st = aut.states[lbl]
        lo, hi = bounds[j], bounds[j + 1]
        counts[lo : hi + 1] = sum(pop_count[p] for p in st.active_pops)
        if k not in st.active_pops:
            stop_node = min(stop_node, lo)
    return counts, stop_node, bounds


def _probe_costs(aut, schedule, config, res, k, exact_mean=False):
    """Conditional costs of the probe: equilibrium policy vs best response.

    The probe's exact finite-N tracking problem keeps its own 1/N_t
    influence on the empirical average endogenous (effective drift
    A + F/N_t, tracking operator I - H2/N_t); everything other agents
    contribute is frozen at its realized path.  The best response comes
    from certainty equivalence: the finite-N Riccati plus a backward affine
    offset driven by the frozen signals.

    Both policies are priced as exact expectations over the probe's own
    increments given the frozen signals: a noise-free replay of the
    conditional mean path plus the policy's closed-loop noise constant.
    Averaging these conditional costs estimates the same quantities as
    averaging realized costs, with far less Monte Carlo variance, and makes
    the per-run ordering J_dev <= J_eq structural (the equilibrium policy
    is a member of the deviation class).
    """
    n = aut.n
    K = config.steps
    h = config.dt
    spec = aut.specs["q1_ab"].minor(k)
    S = spec.B @ np.linalg.solve(spec.R, spec.B.T)
    BRinv = np.linalg.solve(spec.R, spec.B.T)  # (m, n)
    counts, stop_node, bounds = _probe_timeline(aut, schedule, config, k)
    inv_n = np.zeros(K + 1) if exact_mean else 1.0 / np.maximum(counts, 1.0)

    x0s = res.x0_series
    exo = res.mean_series - inv_n[None, :, None] * res.probe_traj
    rho = x0s @ spec.H1.T + exo @ spec.H2.T
    sig = x0s @ spec.G.T + exo @ spec.F.T

    # terminal reference: at a stop node the pre-event population applies
    if stop_node in res.stop_refs and not exact_mean:
        pre_count = counts[stop_node - 1] if stop_node > 0 else counts[0]
        inv_T = 1.0 / max(pre_count, 1.0)
        exo_T = res.stop_refs[stop_node] - inv_T * res.probe_traj[:, stop_node]
    elif stop_node in res.stop_refs:
        exo_T = res.stop_refs[stop_node]
        inv_T = 0.0
    else:
        exo_T = exo[:, stop_node]
        inv_T = inv_n[stop_node]
    rho_T = x0s[:, stop_node] @ spec.H1.T + exo_T @ spec.H2.T
    M_T = np.eye(n) - inv_T * spec.H2

    # segment-wise backward Riccati (piecewise-constant counts)
    seg_bounds = sorted({0, stop_node} | {b for b in bounds
                                          if 0 < b < stop_node})
    Pi = np.zeros((K + 1, n, n))
    Pi_half = np.zeros((2 * K + 1, n, n))
    Pi_end = M_T.T @ spec.P_bar @ M_T
    q_tab = np.zeros((K + 1, n, n))  # M_t^T P (for the offset forcing)
    M_tab = np.zeros((K + 1, n, n))
    for lo, hi in reversed(list(zip(seg_bounds[:-1], seg_bounds[1:]))):
        inv_seg = inv_n[lo]
        M_seg = np.eye(n) - inv_seg * spec.H2
        P_seg = M_seg.T @ spec.P @ M_seg
        ts_q = h * (lo + 0.25 * np.arange(4 * (hi - lo) + 1))
        A_eff = spec.A.table(ts_q) + inv_seg * spec.F
        quad = _ProbeQuad(f"probe/{k}", spec.B, spec.R, P_seg, S)
        sol = integrate_riccati(quad, hi * h, Pi_end, lo * h, h,
                                A_stages=A_eff[::-1])
        Pi[lo : hi + 1] = sol.Pi
        Pi_half[2 * lo : 2 * hi + 1] = sol.Pi_half
        M_tab[lo:hi] = M_seg
        q_tab[lo:hi] = M_seg.T @ spec.P
        Pi_end = sol.Pi[0]
    M_tab[stop_node] = M_T
    gain_own = np.einsum("ij,tjk->tik", BRinv, Pi)

    A_nodes = spec.A.table(h * np.arange(K + 1))
    A_half = spec.A.table(0.5 * h * np.arange(2 * K + 1))
    inv_half = np.repeat(inv_n, 2)[: 2 * K + 1]
    Aeff_half = A_half + inv_half[:, None, None] * spec.F
    Mcl_half = Aeff_half - np.einsum("ij,tjk->tik", S, Pi_half)

    def to_half(v):
        outv = np.empty((v.shape[0], 2 * K + 1, v.shape[2]))
        outv[:, ::2] = v
        outv[:, 1::2] = 0.5 * (v[:, :-1] + v[:, 1:])
        return outv

    sig_half = to_half(sig)
    rho_half = to_half(rho)
    qP_half = np.repeat(q_tab, 2, axis=0)[: 2 * K + 1]

    def rhs(gval, j):
        return (gval @ Mcl_half[j] + sig_half[:, j] @ Pi_half[j]
                - rho_half[:, j] @ qP_half[j].T)

    g = np.zeros((res.runs, K + 1, n))
    gv = -(rho_T @ spec.P_bar @ M_T)
    g[:, stop_node] = gv
    for i in range(stop_node - 1, -1, -1):
        j2 = 2 * i
        k1 = rhs(gv, j2 + 2)
        k2 = rhs(gv + 0.5 * h * k1, j2 + 1)
        k3 = rhs(gv + 0.5 * h * k2, j2 + 1)
        k4 = rhs(gv + h * k3, j2)
        gv = gv + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        g[:, i] = gv

    # the equilibrium policy, as the simulator applied it
    m = aut.m
    eq_gain = np.zeros((K + 1, aut.m, n))
    eq_off = np.zeros((res.runs, K + 1, m))
    for j, lbl in enumerate(schedule.path):
        st = aut.states[lbl]
        if k not in st.active_pops:
            break
        lo, hi = bounds[j], bounds[j + 1]
        sol = schedule.solves[lbl].sol_minor[k]
        off0 = int(round((lo * h - sol.t0) / h))
        gseg = sol.gain[off0 : off0 + hi - lo + 1]
        eq_gain[lo : hi + 1] = gseg[:, :, :n]
        off = np.einsum("lmq,blq->blm", gseg[:, :, n : 2 * n],
                        x0s[:, lo : hi + 1])
        col = 2 * n
        for p in st.active_pops:
            off += np.einsum("lmq,blq->blm", gseg[:, :, col : col + n],
                             res.xbar_series[p][:, lo : hi + 1])
            col += n
        eq_off[:, lo : hi + 1] = off

    def mean_path_cost(gain_tab, offset):
        x = res.probe_init.copy()
        cost = np.zeros(res.runs)
        for i in range(stop_node):
            u = -(x @ gain_tab[i].T + offset(i))
            track = x @ M_tab[i].T - rho[:, i]
            cost += (_quad(track, spec.P) + _quad(u, spec.R)) * h
            drift = (x @ (A_nodes[i] + inv_n[i] * spec.F).T + u @ spec.B.T
                     + sig[:, i])
            x = x + drift * h
        cost += _quad(x @ M_T.T - rho_T, spec.P_bar)
        return cost

    J_dev = mean_path_cost(gain_own, lambda i: g[:, i] @ BRinv.T)
    J_eq = mean_path_cost(eq_gain, lambda i: eq_off[:, i])

    # closed-loop noise constants of both policies
    DDh = h * (spec.D @ spec.D.T)
    Q_dev = M_T.T @ spec.P_bar @ M_T
    Q_eq = Q_dev.copy()
    c_dev = c_eq = 0.0
    Gam = h * spec.B
    for i in range(stop_node - 1, -1, -1):
        Phi = np.eye(n) + h * (A_nodes[i] + inv_n[i] * spec.F)
        stage = h * (M_tab[i].T @ spec.P @ M_tab[i])
        c_dev += float(np.sum(DDh * Q_dev))
        c_eq += float(np.sum(DDh * Q_eq))
        Acl = Phi - Gam @ gain_own[i]
        Q_dev = stage + h * gain_own[i].T @ spec.R @ gain_own[i] \
            + Acl.T @ Q_dev @ Acl
        Acl = Phi - Gam @ eq_gain[i]
        Q_eq = stage + h * eq_gain[i].T @ spec.R @ eq_gain[i] \
            + Acl.T @ Q_eq @ Acl
    return J_eq + c_eq, J_dev + c_dev


def _nash_row(aut, schedule, cfg, probe_type, use_empirical,
              probe_count) -> NashRow:
    eq_acc = np.zeros(cfg.runs)
    dev_acc = np.zeros(cfg.runs)
    count = min(probe_count,
                cfg.N_a if probe_type == "a" else cfg.N_b)
    for idx in range(count):
        res = simulate(aut, schedule, cfg, probe=(probe_type, idx),
                       use_empirical=use_empirical)
        J_eq_runs, J_dev_runs = _probe_costs(
            aut, schedule, cfg, res, probe_type,
            exact_mean=not use_empirical)
        eq_acc += J_eq_runs
        dev_acc += J_dev_runs
    eq_acc /= count
    dev_acc /= count
    delta = eq_acc - dev_acc
    return NashRow(
        N=cfg.N, J_eq=float(eq_acc.mean()), J_dev=float(dev_acc.mean()),
        epsilon=max(0.0, float(delta.mean())),
        stderr=float(delta.std(ddof=1) / math.sqrt(len(delta))),
        stderr_eq=float(eq_acc.std(ddof=1) / math.sqrt(len(eq_acc))),
    )


def nash_gap(aut: Automaton, schedule, config: SimConfig, ladder, *,
             probe_type: str = "a", probe_count: int = 1,
             include_exact_mean: bool = True) -> NashReport:
    """Monte Carlo epsilon-Nash estimates over a population ladder.

    For each N the population is simulated under the mean-field laws with
    common random numbers; a probe minor agent's best deviation against the
    frozen realized signals prices the gap, clipped at zero.
    ``probe_count`` sets the deviation budget (how many probe agents are
    re-solved and averaged).  ``include_exact_mean`` adds the
    infinite-population proxy (dynamics driven by the solved mean field),
    where no deviation should help.
    """
    rows = []
    for N in ladder:
        N_a = int(round(aut.pi.pi_a * N))
        cfg = config.with_counts(N_a, N - N_a)
        rows.append(_nash_row(aut, schedule, cfg, probe_type, True,
                              probe_count))
    exact_row = None
    if include_exact_mean:
        N = max(ladder)
        N_a = int(round(aut.pi.pi_a * N))
        cfg = config.with_counts(N_a, N - N_a)
        exact_row = _nash_row(aut, schedule, cfg, probe_type, False,
                              probe_count)
    return NashReport(rows, exact_row)


def stability_check(result: SimulationResult, bound: float = 1e6):
    """Per-agent max-over-time Monte Carlo second moments, with flags."""
    if result.runs < 30:
        raise ValueError("stability check needs at least 30 runs")
    moments = result.second_moments().max(axis=1)
    return moments, moments <= bound
