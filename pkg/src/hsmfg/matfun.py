"""Matrix-valued functions of time.

The model data mixes constant matrices, entries given as named elementary
functions (c*exp(a*t), c*exp(a*t)*cos(b*t), c*exp(a*t)*sin(b*t)), matrices
tabulated on a uniform grid (Riccati solutions, mean-field law tables), and
block compositions of all of the above.  Every variant supports vectorised
evaluation so that a full backward sweep can assemble its coefficient tables
with a handful of numpy calls.
"""

from __future__ import annotations

import numpy as np

from .errors import ScenarioError

ENTRY_KINDS = ("const", "exp", "expcos", "expsin")


def _eval_term(kind: str, c: float, a: float, b: float, ts: np.ndarray) -> np.ndarray:
    if kind == "const":
        return np.full_like(ts, c, dtype=float)
    if kind == "exp":
        return c * np.exp(a * ts)
    if kind == "expcos":
        return c * np.exp(a * ts) * np.cos(b * ts)
    if kind == "expsin":
        return c * np.exp(a * ts) * np.sin(b * ts)
    raise ScenarioError(f"unknown entry kind {kind!r}")


def _diff_term(kind: str, c: float, a: float, b: float):
    """Closed-form derivative of one term, as a list of terms."""
    if kind == "const":
        return []
    if kind == "exp":
        return [("exp", c * a, a, 0.0)]
    if kind == "expcos":
        return [("expcos", c * a, a, b), ("expsin", -c * b, a, b)]
    if kind == "expsin":
        return [("expsin", c * a, a, b), ("expcos", c * b, a, b)]
    raise ScenarioError(f"unknown entry kind {kind!r}")


class MatrixFunction:
    """Base: a (d1, d2) matrix depending on time."""

    shape: tuple[int, int]
    constant: bool = False

    def table(self, ts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at(self, t: float) -> np.ndarray:
        return self.table(np.asarray([float(t)]))[0]


class Const(MatrixFunction):
    constant = True

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        if self.value.ndim != 2:
            raise ValueError("Const expects a 2-d array")
        self.shape = self.value.shape

    def table(self, ts):
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to(self.value, (len(ts),) + self.shape).copy()

    def at(self, t):
        return self.value


class Entries(MatrixFunction):
    """Matrix whose entries are sums of named elementary terms.

    ``terms[i][j]`` is a list of ``(kind, c, a, b)`` tuples; the entry value is
    the sum of the terms.
    """

    def __init__(self, terms):
        self.terms = [
            [[tuple(term) for term in entry] for entry in row] for row in terms
        ]
        self.shape = (len(self.terms), len(self.terms[0]))
        for row in self.terms:
            if len(row) != self.shape[1]:
                raise ValueError("ragged entry table")
        self.constant = all(
            all(all(term[0] == "const" for term in entry) for entry in row)
            for row in self.terms
        )

    def table(self, ts):
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((len(ts),) + self.shape)
        for i, row in enumerate(self.terms):
            for j, entry in enumerate(row):
                for kind, c, a, b in entry:
                    out[:, i, j] += _eval_term(kind, c, a, b, ts)
        return out

    def derivative(self) -> "Entries":
        return Entries(
            [
                [sum((_diff_term(*term) for term in entry), []) for entry in row]
                for row in self.terms
            ]
        )


class Sampled(MatrixFunction):
    """Matrix tabulated on a uniform grid, linearly interpolated in between.

    Evaluation outside the grid clamps to the nearest endpoint.
    """

    def __init__(self, t0: float, dt: float, values: np.ndarray):
        self.t0 = float(t0)
        self.dt = float(dt)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("Sampled expects values of shape (L, d1, d2)")
        self.shape = self.values.shape[1:]

    def table(self, ts):
        ts = np.asarray(ts, dtype=float)
        pos = (ts - self.t0) / self.dt
        pos = np.clip(pos, 0.0, self.values.shape[0] - 1.0)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, self.values.shape[0] - 1)
        w = (pos - lo)[:, None, None]
        return self.values[lo] * (1.0 - w) + self.values[hi] * w


class Blocks(MatrixFunction):
    """Block matrix assembled from child matrix functions.

    ``blocks`` is a nested list; each cell is a MatrixFunction, an ndarray
    (treated as constant) or None (zero block).  Row heights / column widths
    are read off the non-None cells and must be consistent.
    """

    def __init__(self, blocks):
        self.blocks = [
            [None if b is None else as_matfun(b) for b in row] for row in blocks
        ]
        n_rows = len(self.blocks)
        n_cols = len(self.blocks[0])
        heights = [0] * n_rows
        widths = [0] * n_cols
        for i, row in enumerate(self.blocks):
            if len(row) != n_cols:
                raise ValueError("ragged block layout")
            for j, b in enumerate(row):
                if b is None:
                    continue
                h, w = b.shape
                if heights[i] and heights[i] != h:
                    raise ValueError("inconsistent block heights")
                if widths[j] and widths[j] != w:
                    raise ValueError("inconsistent block widths")
                heights[i], widths[j] = h, w
        if any(h == 0 for h in heights) or any(w == 0 for w in widths):
            raise ValueError("a full row or column of zero blocks has no size")
        self._row_off = np.concatenate([[0], np.cumsum(heights)])
        self._col_off = np.concatenate([[0], np.cumsum(widths)])
        self.shape = (int(self._row_off[-1]), int(self._col_off[-1]))
        self.constant = all(
            b is None or b.constant for row in self.blocks for b in row
        )

    def table(self, ts):
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((len(ts),) + self.shape)
        for i, row in enumerate(self.blocks):
            r0, r1 = self._row_off[i], self._row_off[i + 1]
            for j, b in enumerate(row):
                if b is None:
                    continue
                c0, c1 = self._col_off[j], self._col_off[j + 1]
                out[:, r0:r1, c0:c1] = b.table(ts)
        return out


def as_matfun(x) -> MatrixFunction:
    if isinstance(x, MatrixFunction):
        return x
    return Const(np.asarray(x, dtype=float))


def entries_from_config(spec, shape=None) -> Entries:
    """Parse a config-side matrix: nested lists of numbers or term dicts.

    A term dict looks like ``{"kind": "exp", "c": 2.0, "a": -1.0}`` with an
    optional ``"b"`` for the cos/sin kinds; a plain number is a constant.
    """

    def parse_entry(e):
        if isinstance(e, (int, float)):
            return [("const", float(e), 0.0, 0.0)]
        if isinstance(e, dict):
            extra = set(e) - {"kind", "c", "a", "b"}
            if extra:
                raise ScenarioError(f"unknown entry keys {sorted(extra)}")
            kind = e.get("kind")
            if kind not in ENTRY_KINDS:
                raise ScenarioError(f"unknown entry kind {kind!r}")
            return [(kind, float(e.get("c", 1.0)), float(e.get("a", 0.0)),
                     float(e.get("b", 0.0)))]
        raise ScenarioError(f"cannot parse matrix entry {e!r}")

    if not isinstance(spec, list) or not spec or not isinstance(spec[0], list):
        raise ScenarioError("matrix must be a nested list (rows of entries)")
    terms = [[parse_entry(e) for e in row] for row in spec]
    m = Entries(terms)
    if shape is not None and m.shape != tuple(shape):
        raise ScenarioError(f"matrix has shape {m.shape}, expected {tuple(shape)}")
    return m


def entries_to_config(m: Entries):
    """Inverse of entries_from_config (single-term entries only)."""
    out = []
    for row in m.terms:
        out_row = []
        for entry in row:
            if len(entry) == 1 and entry[0][0] == "const":
                out_row.append(entry[0][1])
            elif len(entry) == 1:
                kind, c, a, b = entry[0]
                d = {"kind": kind, "c": c, "a": a}
                if kind in ("expcos", "expsin"):
                    d["b"] = b
                out_row.append(d)
            else:
                raise ScenarioError("multi-term entries are not serialisable")
        out.append(out_row)
    return out
