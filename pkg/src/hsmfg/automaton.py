"""Hybrid automaton of the two-population switching/stopping game.

Eight discrete states describe which major dynamics is active and which minor
subpopulations are still in the system.  Twelve controlled transitions connect
them: one major switch and one stop per remaining subpopulation from each
state.  Each edge carries linear jump maps (for the major's and each minor
type's extended state) together with quadratic switching-cost weights built
from terminal-weight projections of the coordinates that leave the state
space.

The topology is fixed; only the dimensions and matrix data vary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, WeightError
from .matfun import MatrixFunction, as_matfun

POPS = ("a", "b")

EVENT_MAJOR = "major_switch"
EVENT_STOP = {"a": "pop_a_stops", "b": "pop_b_stops"}


@dataclass(frozen=True)
class DiscreteState:
    """One node of the automaton.

    ``stage`` counts the events that have already happened, ``major_mode`` is
    the active major dynamics (1 or 2) and ``active_pops`` lists the minor
    subpopulations still present, in ('a', 'b') order.
    """

    label: str
    stage: int
    major_mode: int
    active_pops: tuple[str, ...]

    @property
    def n_active(self) -> int:
        return len(self.active_pops)

    def pop_index(self, k: str) -> int:
        return self.active_pops.index(k)


def _mk(label, stage, mode, pops):
    return DiscreteState(label, stage, mode, tuple(pops))


STATES = {
    s.label: s
    for s in (
        _mk("q1_ab", 0, 1, "ab"),
        _mk("q2_ab", 1, 2, "ab"),
        _mk("q1_a", 1, 1, "a"),
        _mk("q1_b", 1, 1, "b"),
        _mk("q2_a", 2, 2, "a"),
        _mk("q2_b", 2, 2, "b"),
        _mk("q1", 2, 1, ""),
        _mk("q2", 3, 2, ""),
    )
}

SOURCE = STATES["q1_ab"]
SINK = STATES["q2"]

# (from, to, event); the event names the discrete input that fires the edge.
TOPOLOGY = (
    ("q1_ab", "q2_ab", EVENT_MAJOR),
    ("q1_ab", "q1_b", EVENT_STOP["a"]),
    ("q1_ab", "q1_a", EVENT_STOP["b"]),
    ("q2_ab", "q2_b", EVENT_STOP["a"]),
    ("q2_ab", "q2_a", EVENT_STOP["b"]),
    ("q1_a", "q2_a", EVENT_MAJOR),
    ("q1_a", "q1", EVENT_STOP["a"]),
    ("q1_b", "q2_b", EVENT_MAJOR),
    ("q1_b", "q1", EVENT_STOP["b"]),
    ("q2_a", "q2", EVENT_STOP["a"]),
    ("q2_b", "q2", EVENT_STOP["b"]),
    ("q1", "q2", EVENT_MAJOR),
)


@dataclass(frozen=True)
class PopulationFractions:
    """Limit fractions of the two minor subpopulations."""

    pi_a: float
    pi_b: float

    def __post_init__(self):
        for v in (self.pi_a, self.pi_b):
            if not 0.0 <= v <= 1.0:
                raise ValueError("population fractions must lie in [0, 1]")

    def in_state(self, state: DiscreteState) -> tuple[float, ...]:
        """Fractions attached to the state, restricted to its active pops.

        Two-population states keep the global fractions; a lone surviving
        subpopulation has fraction one; empty states have none.
        """
        if state.n_active == 2:
            return (self.pi_a, self.pi_b)
        if state.n_active == 1:
            return (1.0,)
        return ()


def _check_sym(M, name, tol=1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")
    if np.max(np.abs(M - M.T)) > tol * max(1.0, np.max(np.abs(M))):
        raise WeightError(f"{name} is not symmetric")
    return M


def _check_psd(M, name):
    M = _check_sym(M, name)
    if np.min(np.linalg.eigvalsh(M)) < -1e-10 * max(1.0, np.max(np.abs(M))):
        raise WeightError(f"{name} is not positive semidefinite")
    return M


def _check_pd(M, name):
    M = _check_sym(M, name)
    if np.min(np.linalg.eigvalsh(M)) <= 0.0:
        raise WeightError(f"{name} is not positive definite")
    return M


@dataclass
class ModeSpec:
    """Matrices of one agent class under one set of dynamics.

    The state matrix ``A`` may be time varying; everything else is constant.
    The major class uses ``H`` (tracking of the minor average); minor classes
    use ``G`` (major-state coupling) plus ``H1``/``H2`` (tracking of the major
    state and of the minor average).  Unused couplings default to zero.
    """

    A: MatrixFunction
    B: np.ndarray
    D: np.ndarray
    F: np.ndarray = None
    P: np.ndarray = None
    R: np.ndarray = None
    P_bar: np.ndarray = None
    H: np.ndarray = None
    G: np.ndarray = None
    H1: np.ndarray = None
    H2: np.ndarray = None

    def __post_init__(self):
        self.A = as_matfun(self.A)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.D.shape[0] != n:
            raise DimensionError("B and D must have n rows")
        zeros = np.zeros((n, n))
        for name in ("F", "H", "G", "H1", "H2"):
            v = getattr(self, name)
            v = zeros.copy() if v is None else np.asarray(v, dtype=float)
            if v.shape != (n, n):
                raise DimensionError(f"{name} must be {n}x{n}, got {v.shape}")
            setattr(self, name, v)
        self.P = _check_psd(np.eye(n) if self.P is None else self.P, "P")
        self.P_bar = _check_psd(
            np.eye(n) if self.P_bar is None else self.P_bar, "P_bar"
        )
        m = self.B.shape[1]
        self.R = _check_pd(np.eye(m) if self.R is None else self.R, "R")
        if self.R.shape != (m, m):
            raise DimensionError("R must match the input dimension")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r(self) -> int:
        return self.D.shape[1]


@dataclass
class ClassSpecs:
    """ModeSpecs of every agent class present in one discrete state."""

    major: ModeSpec
    minor_a: ModeSpec | None = None
    minor_b: ModeSpec | None = None

    def minor(self, k: str) -> ModeSpec | None:
        return self.minor_a if k == "a" else self.minor_b


def modes_from_classes(major_mode1, major_mode2, minor_a, minor_b):
    """Expand per-class specs into the label -> ClassSpecs map."""
    out = {}
    for label, st in STATES.items():
        major = major_mode1 if st.major_mode == 1 else major_mode2
        out[label] = ClassSpecs(
            major=major,
            minor_a=minor_a if "a" in st.active_pops else None,
            minor_b=minor_b if "b" in st.active_pops else None,
        )
    return out


def pi_kron(fracs, F) -> np.ndarray:
    """Horizontal block [f_1*F, ..., f_p*F] over the active fractions.

    ``fracs`` is a tuple of fractions or a PopulationFractions (both
    entries taken).  With a single active population the block is F itself
    (fraction one); with none the result has zero width.
    """
    if isinstance(fracs, PopulationFractions):
        fracs = (fracs.pi_a, fracs.pi_b)
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if len(fracs) == 0:
        return np.zeros((n, 0))
    return np.hstack([f * F for f in fracs])


def mask_block(Pbar, l: int, m: int) -> np.ndarray:
    """Keep rows l..m and columns l..m (1-based, inclusive) of Pbar.

    The union of the row band and the column band survives; everything else
    is zeroed.  The overlapping diagonal block is kept once.
    """
    Pbar = np.asarray(Pbar, dtype=float)
    s = Pbar.shape[0]
    if Pbar.shape != (s, s):
        raise DimensionError("mask_block expects a square matrix")
    if not (1 <= l <= m <= s):
        raise IndexError(f"mask range {l}:{m} out of bounds for size {s}")
    out = np.zeros_like(Pbar)
    out[l - 1 : m, :] = Pbar[l - 1 : m, :]
    out[:, l - 1 : m] = Pbar[:, l - 1 : m]
    return out


def _selector(keep_blocks, n_blocks, n) -> np.ndarray:
    """0/1 block matrix that keeps the listed n-wide blocks, in order."""
    S = np.zeros((len(keep_blocks) * n, n_blocks * n))
    for row, blk in enumerate(keep_blocks):
        S[row * n : (row + 1) * n, blk * n : (blk + 1) * n] = np.eye(n)
    return S


@dataclass(frozen=True)
class JumpTransition:
    """One directed edge: jump maps and switching-cost weights per class."""

    from_state: DiscreteState
    to_state: DiscreteState
    event: str
    psi_major: np.ndarray
    cost_major: np.ndarray
    psi_minor: dict = field(default_factory=dict)
    cost_minor: dict = field(default_factory=dict)

    @property
    def psi_minor_a(self):
        return self.psi_minor.get("a")

    @property
    def psi_minor_b(self):
        return self.psi_minor.get("b")

    @property
    def cost_minor_a(self):
        return self.cost_minor.get("a")

    @property
    def cost_minor_b(self):
        return self.cost_minor.get("b")

    def stopped_pop(self) -> str | None:
        for k in POPS:
            if self.event == EVENT_STOP[k]:
                return k
        return None


class Automaton:
    """Validated graph of the eight discrete states and twelve transitions.

    All contained data is constructed once and treated as immutable, so an
    instance is safe to share across concurrent readers.
    """

    def __init__(self, n, m, r, specs, pi):
        self.n = int(n)
        self.m = int(m)
        self.r = int(r)
        self.specs = specs
        self.pi = pi
        self.states = STATES
        self.edges = [self._build_edge(f, t, e) for f, t, e in TOPOLOGY]
        self._edges_by_pair = {
            (e.from_state.label, e.to_state.label): e for e in self.edges
        }
        self._validate_graph()

    # -- dimensions ---------------------------------------------------------

    def major_dim(self, state: DiscreteState) -> int:
        return self.n * (1 + state.n_active)

    def minor_dim(self, state: DiscreteState) -> int:
        return self.n * (2 + state.n_active)

    def xbar_width(self, state: DiscreteState) -> int:
        return self.n * state.n_active

    def fractions(self, state: DiscreteState) -> tuple[float, ...]:
        return self.pi.in_state(state)

    def edge(self, from_label: str, to_label: str) -> JumpTransition:
        return self._edges_by_pair[(from_label, to_label)]

    def out_edges(self, state: DiscreteState):
        return [e for e in self.edges if e.from_state is state]

    def in_edges(self, state: DiscreteState):
        return [e for e in self.edges if e.to_state is state]

    # -- cost projections ---------------------------------------------------

    def major_tracking(self, state: DiscreteState) -> np.ndarray:
        """[I, -f_a H, -f_b H] restricted to the active populations."""
        spec = self.specs[state.label].major
        fr = self.fractions(state)
        return np.hstack([np.eye(self.n), -pi_kron(fr, spec.H)])

    def minor_tracking(self, state: DiscreteState, k: str) -> np.ndarray:
        spec = self.specs[state.label].minor(k)
        fr = self.fractions(state)
        return np.hstack([np.eye(self.n), -spec.H1, -pi_kron(fr, spec.H2)])

    def major_running_weight(self, state) -> np.ndarray:
        T = self.major_tracking(state)
        return T.T @ self.specs[state.label].major.P @ T

    def major_terminal_weight(self, state) -> np.ndarray:
        T = self.major_tracking(state)
        return T.T @ self.specs[state.label].major.P_bar @ T

    def major_horizon_weight(self, state) -> np.ndarray:
        """Extended terminal weight when the horizon ends in ``state``.

        The major's terminal cost charges the physical state alone, so the
        mean-field coordinates carry zero terminal weight (the tracking
        sandwich is used only for switching costs).
        """
        d = self.major_dim(state)
        out = np.zeros((d, d))
        out[: self.n, : self.n] = self.specs[state.label].major.P_bar
        return out

    def minor_running_weight(self, state, k) -> np.ndarray:
        T = self.minor_tracking(state, k)
        return T.T @ self.specs[state.label].minor(k).P @ T

    def minor_terminal_weight(self, state, k) -> np.ndarray:
        T = self.minor_tracking(state, k)
        return T.T @ self.specs[state.label].minor(k).P_bar @ T

    # -- extended diffusion -------------------------------------------------

    def major_diffusion(self, state) -> np.ndarray:
        """Extended diffusion: D of the major on top, zero mean-field rows."""
        spec = self.specs[state.label].major
        d = self.major_dim(state)
        w = self.r * (1 + state.n_active)
        out = np.zeros((d, w))
        out[: self.n, : self.r] = spec.D
        return out

    def minor_diffusion(self, state, k) -> np.ndarray:
        spec = self.specs[state.label].minor(k)
        Dmaj = self.major_diffusion(state)
        d = self.minor_dim(state)
        out = np.zeros((d, self.r + Dmaj.shape[1]))
        out[: self.n, : self.r] = spec.D
        out[self.n :, self.r :] = Dmaj
        return out

    # -- edge construction --------------------------------------------------

    def _major_psi(self, frm, to):
        if frm.active_pops == to.active_pops:
            return np.eye(self.major_dim(frm))
        keep = [0] + [1 + frm.pop_index(k) for k in to.active_pops]
        return _selector(keep, 1 + frm.n_active, self.n)

    def _minor_psi(self, frm, to, k):
        keep = [0, 1] + [2 + frm.pop_index(l) for l in to.active_pops]
        return _selector(keep, 2 + frm.n_active, self.n)

    def _build_edge(self, from_label, to_label, event):
        frm, to = STATES[from_label], STATES[to_label]
        n = self.n
        stopped = None
        for k in POPS:
            if event == EVENT_STOP[k]:
                stopped = k

        if stopped is None:
            psi0 = np.eye(self.major_dim(frm))
            cost0 = np.zeros((self.major_dim(frm),) * 2)
        else:
            psi0 = self._major_psi(frm, to)
            off = n * (1 + frm.pop_index(stopped))
            cost0 = mask_block(self.major_terminal_weight(frm), off + 1, off + n)

        psi_minor, cost_minor = {}, {}
        for k in frm.active_pops:
            if k == stopped:
                # The agent's own trajectory terminates: the jump annihilates
                # the extended state and the terminal weight is charged as the
                # switching cost.
                psi_minor[k] = np.zeros((n, self.minor_dim(frm)))
                cost_minor[k] = self.minor_terminal_weight(frm, k)
            elif stopped is None:
                psi_minor[k] = np.eye(self.minor_dim(frm))
                cost_minor[k] = np.zeros((self.minor_dim(frm),) * 2)
            else:
                psi_minor[k] = self._minor_psi(frm, to, k)
                off = n * (2 + frm.pop_index(stopped))
                cost_minor[k] = mask_block(
                    self.minor_terminal_weight(frm, k), off + 1, off + n
                )

        return JumpTransition(frm, to, event, psi0, cost0, psi_minor, cost_minor)

    # -- validation ---------------------------------------------------------

    def _validate_graph(self):
        if len(self.edges) != 12:
            raise RuntimeError("expected 12 edges")
        for e in self.edges:
            if e.to_state.stage != e.from_state.stage + 1:
                raise RuntimeError("edges must advance the stage by one")
            d_to, d_frm = self.major_dim(e.to_state), self.major_dim(e.from_state)
            if e.psi_major.shape != (d_to, d_frm):
                raise DimensionError("major jump map has wrong shape")
            _check_sym(e.cost_major, "cost_major")
            if e.cost_major.shape != (d_frm, d_frm):
                raise DimensionError("major switching cost has wrong shape")
            for k, psi in e.psi_minor.items():
                if psi.shape[1] != self.minor_dim(e.from_state):
                    raise DimensionError("minor jump map has wrong shape")
                _check_sym(e.cost_minor[k], f"cost_minor[{k}]")

    def full_paths(self):
        """All maximal source-to-sink label paths."""
        paths = []

        def walk(state, acc):
            outs = self.out_edges(state)
            if not outs:
                paths.append(tuple(acc))
                return
            for e in outs:
                walk(e.to_state, acc + [e.to_state.label])

        walk(SOURCE, [SOURCE.label])
        return paths

    def path_prefixes(self):
        """All root-anchored prefixes, including the single-state one."""
        out = set()
        for p in self.full_paths():
            for i in range(1, len(p) + 1):
                out.add(p[:i])
        return sorted(out, key=lambda p: (len(p), p))


def build_automaton(n, modes, pi) -> Automaton:
    """Assemble and validate the automaton from per-state ModeSpecs.

    ``modes`` maps every state label to a ClassSpecs with entries for the
    major and for each minor type active in that state.
    """
    if n < 1:
        raise ValueError("state dimension must be >= 1")
    missing = set(STATES) - set(modes)
    if missing:
        raise KeyError(f"missing ModeSpecs for states {sorted(missing)}")
    unknown = set(modes) - set(STATES)
    if unknown:
        raise KeyError(f"unknown state labels {sorted(unknown)}")
    m = r = None
    for label, st in STATES.items():
        cs = modes[label]
        for role, spec in (("major", cs.major), ("minor_a", cs.minor_a),
                           ("minor_b", cs.minor_b)):
            pop = role[-1]
            needed = role == "major" or pop in st.active_pops
            if needed and spec is None:
                raise KeyError(f"state {label} lacks a {role} ModeSpec")
            if spec is None:
                continue
            if spec.n != n:
                raise DimensionError(
                    f"{role} spec in {label} has n={spec.n}, expected {n}"
                )
            m = spec.m if m is None else m
            r = spec.r if r is None else r
            if spec.m != m or spec.r != r:
                raise DimensionError("all classes must share input/noise dims")
    return Automaton(n, m, r, modes, pi)


@dataclass
class EdgeCompat:
    """Diffusion-compatibility report entry for one edge and one class."""

    edge: JumpTransition
    agent: str
    residual: float
    passed: bool


def check_diffusion_compat(automaton: Automaton, atol: float = 0.0):
    """Check D_to == Psi @ D_from for the major and each active minor family.

    The extended diffusion of the target state is zero-padded on the right to
    the source noise width (dropping a subpopulation narrows the padding, not
    the driving noise).  Minor families that stop on an edge are compared
    against the zero matrix.  An edge passes iff the Frobenius residual does
    not exceed ``atol`` (exactly zero by default: the matrices are
    constructed, not measured).
    """
    report = []
    for e in automaton.edges:
        pairs = [("major", e.psi_major,
                  automaton.major_diffusion(e.from_state),
                  automaton.major_diffusion(e.to_state))]
        for k in e.from_state.active_pops:
            D_from = automaton.minor_diffusion(e.from_state, k)
            if k == e.stopped_pop():
                D_to = np.zeros((automaton.n, D_from.shape[1]))
            else:
                D_to = automaton.minor_diffusion(e.to_state, k)
            pairs.append((f"minor_{k}", e.psi_minor[k], D_from, D_to))
        for agent, psi, D_from, D_to in pairs:
            mapped = psi @ D_from
            padded = np.zeros_like(mapped)
            padded[:, : D_to.shape[1]] = D_to
            res = float(np.linalg.norm(padded - mapped))
            report.append(EdgeCompat(e, agent, res, res <= atol))
    return report


def automaton_to_text(automaton: Automaton) -> str:
    """Structured-text form of the graph (labels, events, jump data).

    Matrices are emitted as nested lists with the same entry encoding as the
    scenario files, so golden tests can diff the document directly.
    """
    import json

    doc = {
        "schema_version": 1,
        "dims": {"n": automaton.n, "m": automaton.m, "r": automaton.r},
        "pi": [automaton.pi.pi_a, automaton.pi.pi_b],
        "states": [
            {
                "label": s.label,
                "stage": s.stage,
                "major_mode": s.major_mode,
                "active_pops": list(s.active_pops),
            }
            for s in sorted(STATES.values(), key=lambda s: (s.stage, s.label))
        ],
        "edges": [
            {
                "from": e.from_state.label,
                "to": e.to_state.label,
                "event": e.event,
                "psi_major": e.psi_major.tolist(),
                "cost_major": e.cost_major.tolist(),
                "psi_minor": {k: v.tolist() for k, v in e.psi_minor.items()},
                "cost_minor": {k: v.tolist() for k, v in e.cost_minor.items()},
            }
            for e in automaton.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
