"""Backward matrix Riccati sweeps, jump boundary maps and event-time search.

The backward ODE  -dPi/dt = Pi A + A^T Pi - Pi B R^{-1} B^T Pi + P  is
integrated with classical fixed-step RK4 on the scenario grid.  At a
transition the solution jumps by  Pi_before = Psi^T Pi_after Psi + C.  The
instant of an optimal switch or stop is where the matrix-valued Hamiltonian
gap H(s) crosses zero from negative definite to positive definite; the search
scalarises that crossing through the extreme eigenvalues.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousEventError, DefinitenessError, FiniteEscapeError
from .kernels import rk4_riccati_sweep
from .matfun import MatrixFunction, Sampled

TOL_DEF = 1e-8
TOL_ROOT = 1e-10


@dataclass
class RiccatiSolution:
    """Pi(t) on one discrete state's window, plus cached feedback gains.

    ``grid``/``Pi`` hold the reporting nodes (step h, ascending time);
    ``Pi_half`` keeps the intermediate half-step values so that systems whose
    coefficients involve this solution can sample it at RK4 stage times
    without interpolation loss.  ``gain`` is R^{-1} B^T Pi; the feedback law
    is u = -gain @ x_ex.
    """

    label: str
    t0: float
    t1: float
    h: float
    grid: np.ndarray
    Pi: np.ndarray
    Pi_half: np.ndarray | None
    gain: np.ndarray
    sys: object = None

    @property
    def dim(self) -> int:
        return self.Pi.shape[1]

    def pi_fun(self) -> MatrixFunction:
        """Matrix function view (finest stored resolution, linear interp)."""
        if self.Pi_half is not None:
            return Sampled(self.t0, self.h / 2.0, self.Pi_half)
        return Sampled(self.t0, self.h, self.Pi)

    def pi_at(self, t: float) -> np.ndarray:
        self._check_inside(t)
        return self.pi_fun().at(t)

    def _check_inside(self, t: float):
        if not (self.t0 - 1e-9 <= t <= self.t1 + 1e-9):
            raise ValueError(
                f"t={t:.6g} outside segment [{self.t0:.6g}, {self.t1:.6g}] "
                f"of mode {self.label!r}"
            )

    def gain_at(self, t: float) -> np.ndarray:
        self._check_inside(t)
        pos = np.clip((t - self.t0) / self.h, 0.0, len(self.grid) - 1.0)
        lo = int(pos)
        hi = min(lo + 1, len(self.grid) - 1)
        w = pos - lo
        return self.gain[lo] * (1.0 - w) + self.gain[hi] * w

    def node_index(self, t: float) -> int:
        self._check_inside(t)
        i = int(round((t - self.t0) / self.h))
        if abs(self.t0 + i * self.h - t) > 1e-9:
            raise ValueError(f"t={t:.6g} is not a grid node")
        return i

    def trace_noise_cost(self, D: np.ndarray, t_lo=None, t_hi=None) -> float:
        """Trapezoid of tr(D^T Pi(t) D) over [t_lo, t_hi] (defaults: window)."""
        a = 0 if t_lo is None else self.node_index(t_lo)
        b = len(self.grid) - 1 if t_hi is None else self.node_index(t_hi)
        vals = np.einsum("ki,tkl,lj->tij", D, self.Pi[a : b + 1], D)
        integrand = np.trace(vals, axis1=1, axis2=2)
        return float(np.trapezoid(integrand, dx=self.h))

    def to_csv(self, path):
        d = self.dim
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"pi_{i + 1}_{j + 1}" for i in range(d)
                                for j in range(d)])
            for t, M in zip(self.grid, self.Pi):
                w.writerow([f"{t:.10g}"] + [f"{v:.17g}" for v in M.reshape(-1)])


def integrate_riccati(sys, t_end, Pi_end, t_start, h, *, substeps=2,
                      psd_check=False, psd_tol=1e-8,
                      A_stages=None) -> RiccatiSolution:
    """Integrate one mode segment backward from ``Pi(t_end) = Pi_end``.

    ``sys`` provides A (time varying), the constant quadratic data P and
    S = B R^{-1} B^T, and a label for error messages.  ``substeps`` internal
    RK4 steps are taken per reported interval (2 by default, which also
    populates the half-grid table).  ``A_stages`` bypasses the evaluation of
    sys.A with a precomputed stage table (descending time, one sample per
    half-step of the internal grid).  With ``psd_check`` the reported nodes
    are verified to stay above -psd_tol in the eigenvalue sense.
    """
    if substeps not in (1, 2):
        raise ValueError("substeps must be 1 or 2")
    span = t_end - t_start
    if span <= 0:
        raise ValueError("t_start must precede t_end")
    K = int(round(span / h))
    if K < 1 or abs(K * h - span) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("window must be a whole number of grid steps")
    n_steps = K * substeps
    step = h / substeps
    if A_stages is None:
        stage_ts = t_end - 0.5 * step * np.arange(2 * n_steps + 1)
        A_st = np.ascontiguousarray(sys.A.table(stage_ts))
    else:
        if A_stages.shape[0] != 2 * n_steps + 1:
            raise ValueError("A_stages has the wrong number of samples")
        A_st = np.ascontiguousarray(A_stages)
    Pi_end = np.ascontiguousarray(np.asarray(Pi_end, dtype=float))
    tbl, escaped = rk4_riccati_sweep(A_st, sys.S, sys.P, Pi_end, step)
    if escaped >= 0:
        t_esc = t_end - escaped * step
        nrm = float(np.linalg.norm(tbl[escaped]))
        raise FiniteEscapeError(getattr(sys, "label", "?"), t_esc, nrm)

    Pi = np.ascontiguousarray(tbl[n_steps::-substeps])
    Pi_half = np.ascontiguousarray(tbl[::-1]) if substeps == 2 else None
    grid = t_start + h * np.arange(K + 1)

    RinvBT = np.linalg.solve(sys.R, sys.B.T)
    gain = np.einsum("ij,tjk->tik", RinvBT, Pi)

    sol = RiccatiSolution(getattr(sys, "label", "?"), float(t_start),
                          float(t_end), float(h), grid, Pi, Pi_half, gain, sys)
    if psd_check:
        scale = max(1.0, float(np.max(np.abs(Pi))))
        mins = np.linalg.eigvalsh(Pi)[:, 0]
        worst = int(np.argmin(mins))
        if mins[worst] < -psd_tol * scale:
            raise DefinitenessError(
                f"Pi lost positive semidefiniteness in mode {sol.label!r} at "
                f"t={grid[worst]:.6g} (min eig {mins[worst]:.3e})"
            )
    return sol


def feedback_gain(solution: RiccatiSolution, t: float) -> np.ndarray:
    """-R^{-1} B^T Pi(t), linearly interpolated between grid nodes."""
    return -solution.gain_at(t)


def apply_jump_condition(Pi_after, edge, agent: str) -> np.ndarray:
    """Pull a Riccati value through an edge: Psi^T Pi Psi + C.

    ``agent`` selects the jump family: "major", "a" or "b".
    """
    if agent == "major":
        psi, cost = edge.psi_major, edge.cost_major
    else:
        psi, cost = edge.psi_minor.get(agent), edge.cost_minor.get(agent)
        if psi is None:
            raise KeyError(
                f"type {agent!r} is not active on edge "
                f"{edge.from_state.label}->{edge.to_state.label}"
            )
    Pi_after = np.asarray(Pi_after, dtype=float)
    if Pi_after.shape != (psi.shape[0], psi.shape[0]):
        raise ValueError(
            f"Pi_after has shape {Pi_after.shape}, expected "
            f"({psi.shape[0]}, {psi.shape[0]})"
        )
    out = psi.T @ Pi_after @ psi + cost
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class GapSide:
    """The (A(t), P, S) triple of one side of a transition."""

    A: MatrixFunction
    P: np.ndarray
    S: np.ndarray


class GapFunction:
    """Symmetric matrix gap s -> H(s) with eigenvalue summaries."""

    def __init__(self, batch, dim, asym_tol=1e-10):
        self._batch = batch
        self.dim = dim
        self.asym_tol = asym_tol

    def batch(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        H = self._batch(ts)
        asym = np.max(np.abs(H - np.transpose(H, (0, 2, 1))))
        scale = max(1.0, float(np.max(np.abs(H))))
        if asym > self.asym_tol * scale:
            raise RuntimeError(f"gap matrix asymmetry {asym:.2e} exceeds tol")
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))

    def matrix(self, s: float) -> np.ndarray:
        return self.batch([s])[0]

    def scalars(self, s: float) -> tuple[float, float]:
        lam = np.linalg.eigvalsh(self.matrix(s))
        return float(lam[0]), float(lam[-1])

    def scalars_batch(self, ts) -> np.ndarray:
        lam = np.linalg.eigvalsh(self.batch(ts))
        return np.stack([lam[:, 0], lam[:, -1]], axis=1)


def _quad_terms(P, S, Pi_t, A_t):
    PA = Pi_t @ A_t
    return P + PA + np.transpose(PA, (0, 2, 1)) - Pi_t @ S @ Pi_t


def switch_gap(psi, cost, before: GapSide, after: GapSide,
               pi_after: MatrixFunction, cost_rate: MatrixFunction | None = None,
               ) -> GapFunction:
    """Hamiltonian-continuity gap of a switching edge.

    At each candidate instant the before-side Riccati value is the jump image
    Psi^T Pi(s) Psi + C of the after-side solution; the gap is the difference
    of the two quadratic Hamiltonian forms.  A time-varying switching weight
    contributes its time derivative through ``cost_rate``.
    """
    psi = np.asarray(psi, dtype=float)
    cost = np.asarray(cost, dtype=float)

    def batch(ts):
        Pa = pi_after.table(ts)
        Qa = _quad_terms(after.P, after.S, Pa, after.A.table(ts))
        Pb = np.einsum("ij,tjk,kl->til", psi.T, Pa, psi) + cost
        Qb = _quad_terms(before.P, before.S, Pb, before.A.table(ts))
        H = Qb - np.einsum("ij,tjk,kl->til", psi.T, Qa, psi)
        if cost_rate is not None:
            H = H + cost_rate.table(ts)
        return H

    return GapFunction(batch, cost.shape[0])


def stopping_gap(weight: MatrixFunction, side: GapSide,
                 weight_rate: MatrixFunction | None = None) -> GapFunction:
    """Marginal value of delaying a stop whose terminal weight is ``weight``.

    H(s) = P + C(s) A(s) + A(s)^T C(s) - C(s) S C(s) + dC/dt(s); the optimal
    stopping instant is the definite-sign zero crossing of H.
    """

    def batch(ts):
        C = weight.table(ts)
        H = _quad_terms(side.P, side.S, C, side.A.table(ts))
        if weight_rate is not None:
            H = H + weight_rate.table(ts)
        return H

    return GapFunction(batch, weight.shape[0])


@dataclass
class EventSearch:
    """Outcome of an event-time search on one window."""

    time: float | None
    status: str  # "event" | "no_event" | "degenerate" | "already_positive"
    #            | "indefinite_crossing"
    lmax_range: tuple[float, float] = (0.0, 0.0)


def find_event_time(gap: GapFunction, window, h, *, tol_def=TOL_DEF,
                    tol_root=TOL_ROOT, context="") -> EventSearch:
    """Locate the instant where the gap crosses from negative to positive.

    Coordinates on which the gap vanishes identically over the whole window
    are indifference directions (the continuity condition holds on them at
    every instant) and are projected out first; a gap that is inert on every
    coordinate reports "degenerate".  The remaining grid is scanned for a
    lambda_max transition from below -tol_def to above +tol_def; the crossing
    is refined by bisection on lambda_max to |lambda_max| < tol_root, and
    definiteness one step after the root is verified through lambda_min.
    Multiple disjoint crossings raise AmbiguousEventError: the theory
    promises a unique instant and a violation is surfaced, not hidden.
    """
    t_lo, t_hi = float(window[0]), float(window[1])
    if t_hi <= t_lo:
        raise ValueError("empty search window")
    count = int(round((t_hi - t_lo) / h))
    ts = t_lo + h * np.arange(count + 1)
    H = gap.batch(ts)

    row_peak = np.max(np.abs(H), axis=(0, 2))
    live = row_peak > tol_def
    if not np.any(live):
        return EventSearch(None, "degenerate", (0.0, 0.0))
    idx = np.flatnonzero(live)
    Hr = H[:, idx[:, None], idx[None, :]]
    lam = np.linalg.eigvalsh(Hr)
    lmin, lmax = lam[:, 0], lam[:, -1]

    brackets = []
    last_neg = None
    for i in range(len(ts)):
        if lmax[i] < -tol_def:
            last_neg = i
        elif lmax[i] > tol_def:
            if last_neg is not None:
                brackets.append((last_neg, i))
                last_neg = None

    lrange = (float(lmax.min()), float(lmax.max()))

    def eig_at(t):
        Ht = gap.matrix(t)[idx[:, None], idx[None, :]]
        lam_t = np.linalg.eigvalsh(Ht)
        return float(lam_t[0]), float(lam_t[-1])

    if not brackets:
        if np.all(lmin > tol_def):
            return EventSearch(None, "already_positive", lrange)
        return EventSearch(None, "no_event", lrange)

    def refine(a, b):
        ta, tb = ts[a], ts[b]
        for _ in range(200):
            tm = 0.5 * (ta + tb)
            lm = eig_at(tm)[1]
            if abs(lm) < tol_root or (tb - ta) < 1e-14:
                return tm
            if lm < 0.0:
                ta = tm
            else:
                tb = tm
        return 0.5 * (ta + tb)

    roots = [refine(a, b) for a, b in brackets]
    if len(roots) > 1:
        raise AmbiguousEventError(roots, context)
    t_star = roots[0]
    flank = min(t_star + h, t_hi)
    if eig_at(flank)[0] <= -tol_def:
        return EventSearch(None, "indefinite_crossing", lrange)
    return EventSearch(float(t_star), "event", lrange)
