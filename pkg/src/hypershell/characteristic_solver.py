"""Picard solver for the linear first-order characteristic system

    d f1 / d x1 = a11 f1 + a12 f2 + p1
    d f2 / d x2 = a21 f1 + a22 f2 + p2

on the primitive and composite planar regions.

Each primitive piece is solved on a shared uniform node grid.  ``f1`` is
integrated along rows from the row-start boundary, ``f2`` along columns from
the column-start boundary, both with the composite trapezoid rule.  Boundary
points that fall between nodes are handled by a partial first segment whose
integrand is evaluated at the boundary point.

Composite regions are solved piece by piece.  Inflow edges not carrying
prescribed data are marked ``UPSTREAM`` and read from the edge traces of
pieces already solved.  A piece whose Picard iteration stops contracting is
split and its parts are solved in turn.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .planar_regions import (
    CompositeRegion,
    ERegion,
    PlanarCurve,
    PlanarRegion,
    PMinusRegion,
    PPlusRegion,
    RegionGrid,
    RRegion,
    split_piece,
)

__all__ = [
    "SolverError",
    "ContractionFailure",
    "UnsolvableInstanceError",
    "EmptyTraceError",
    "UPSTREAM",
    "GridFunction",
    "CharSystem",
    "CurveData",
    "BoundaryData",
    "xi_minus_data",
    "xi_plus_data",
    "phi_data",
    "GridPairField",
    "PieceReport",
    "EdgeTrace",
    "picard_apply",
    "solve_primitive",
    "solve_region",
    "Trace",
    "Segment",
    "VerticalLine",
    "HorizontalLine",
    "Diagonal",
    "CurveLocus",
    "extract_trace",
    "read_binary",
]

MAX_ITER = 200
MAX_DEPTH = 8
RATIO_LIMIT = 0.9
BURN_IN = 2
BINARY_MAGIC = b"HSGRID01"


class SolverError(RuntimeError):
    pass


class ContractionFailure(SolverError):
    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(message)
        self.history = list(history)


class UnsolvableInstanceError(SolverError):
    pass


class EmptyTraceError(SolverError, ValueError):
    pass


class _Upstream:
    def __repr__(self):
        return "UPSTREAM"


UPSTREAM = _Upstream()


# ---------------------------------------------------------------------------
# coefficients


@dataclass
class GridFunction:
    """Node values on a tensor grid, linearly interpolated elsewhere."""

    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.x2 = np.asarray(self.x2, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self._interp = RegularGridInterpolator((self.x1, self.x2), self.values,
                                               bounds_error=False, fill_value=None)

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        b1, b2 = np.broadcast_arrays(x1, x2)
        pts = np.stack([b1.ravel(), b2.ravel()], axis=-1)
        return self._interp(pts).reshape(b1.shape)


Coefficient = Union[float, Callable, GridFunction]


def _eval_coef(c: Coefficient, x1, x2) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    shape = np.broadcast(x1, x2).shape
    if np.isscalar(c) or (isinstance(c, np.ndarray) and c.ndim == 0):
        return np.full(shape, float(c))
    return np.broadcast_to(np.asarray(c(x1, x2), dtype=float), shape).copy()


@dataclass
class CharSystem:
    """Coefficients ``a_ij`` and sources ``p_i``; each a constant, callable ``(x1, x2)`` or GridFunction."""

    a11: Coefficient = 0.0
    a12: Coefficient = 0.0
    a21: Coefficient = 0.0
    a22: Coefficient = 0.0
    p1: Coefficient = 0.0
    p2: Coefficient = 0.0

    NAMES = ("a11", "a12", "a21", "a22", "p1", "p2")

    def evaluate(self, x1, x2) -> dict[str, np.ndarray]:
        return {k: _eval_coef(getattr(self, k), x1, x2) for k in self.NAMES}

    def homogeneous(self) -> "CharSystem":
        return CharSystem(self.a11, self.a12, self.a21, self.a22, 0.0, 0.0)


# ---------------------------------------------------------------------------
# boundary data


def _as_param_fn(q):
    """Accept a callable of ``t`` or samples ``(t, values)`` (interpolated by a cubic spline)."""
    if callable(q):
        return q
    t, v = q
    return CubicSpline(np.asarray(t, dtype=float), np.asarray(v, dtype=float), axis=0)


class CurveData:
    """Values prescribed along a boundary curve as a function of its parameter.

    Points at row starts are located on the curve by their second coordinate,
    points at column starts by their first coordinate.
    """

    def __init__(self, curve: PlanarCurve, q):
        self.curve = curve
        self.q = _as_param_fn(q)

    def at(self, x1, x2, axis: int):
        t = self.curve.t_at_x2(x2) if axis == 0 else self.curve.t_at_x1(x1)
        return np.asarray(self.q(t), dtype=float)


DataEntry = Union[None, float, Callable, CurveData, _Upstream]


def _eval_data(d: DataEntry, x1, x2, axis: int) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if isinstance(d, CurveData):
        return np.broadcast_to(d.at(x1, x2, axis), x1.shape).astype(float)
    return _eval_coef(d, x1, x2)


@dataclass
class BoundaryData:
    """Inflow data of one primitive piece.

    ``left_f1`` gives ``f1`` at row starts and ``bottom_f2`` gives ``f2`` at
    column starts.  ``left_f2`` / ``bottom_f1`` optionally supply the other
    component at those points (available when the full vector is prescribed
    on a curve).  Any entry may be ``UPSTREAM``.
    """

    left_f1: DataEntry = UPSTREAM
    bottom_f2: DataEntry = UPSTREAM
    left_f2: DataEntry = None
    bottom_f1: DataEntry = None

    @classmethod
    def for_E(cls, gamma: PlanarCurve, q) -> "BoundaryData":
        """``q(t)`` returns ``(..., 2)`` values of ``(f1, f2)`` on the curve."""
        qf = _as_param_fn(q)
        c1 = CurveData(gamma, lambda t: np.asarray(qf(t))[..., 0])
        c2 = CurveData(gamma, lambda t: np.asarray(qf(t))[..., 1])
        return cls(left_f1=c1, bottom_f2=c2, left_f2=c2, bottom_f1=c1)

    @classmethod
    def for_R(cls, q1: DataEntry, q2: DataEntry) -> "BoundaryData":
        """``q1(x2)`` on the left edge and ``q2(x1)`` on the bottom edge (callables of one coordinate)."""
        return cls(left_f1=_one_coord(q1, 1), bottom_f2=_one_coord(q2, 0))

    @classmethod
    def for_Pminus(cls, beta: PlanarCurve, q1, q2: DataEntry) -> "BoundaryData":
        """``q1(t)`` on the curve and ``q2(x1)`` on the bottom edge."""
        return cls(left_f1=CurveData(beta, q1), bottom_f2=_one_coord(q2, 0))

    @classmethod
    def for_Pplus(cls, beta: PlanarCurve, q1: DataEntry, q2) -> "BoundaryData":
        """``q1(x2)`` on the left edge and ``q2(t)`` on the curve."""
        return cls(left_f1=_one_coord(q1, 1), bottom_f2=CurveData(beta, q2))


def _one_coord(q: DataEntry, which: int) -> DataEntry:
    if q is None or isinstance(q, (_Upstream, CurveData)) or np.isscalar(q):
        return q
    return lambda x1, x2: q(x2 if which == 1 else x1)


def xi_minus_data(region: CompositeRegion, q1, qhat) -> dict[str, BoundaryData]:
    """``q1(t)`` prescribes ``f1`` on the increasing curve, ``qhat(t)`` the full vector on the decreasing one."""
    E, P = region.pieces[0], region.pieces[1]
    return {"E": BoundaryData.for_E(E.gamma, qhat),
            "Pminus": BoundaryData(left_f1=CurveData(P.beta, q1))}


def xi_plus_data(region: CompositeRegion, q2, qhat) -> dict[str, BoundaryData]:
    """``q2(t)`` prescribes ``f2`` on the increasing curve, ``qhat(t)`` the full vector on the decreasing one."""
    E, P = region.pieces[0], region.pieces[1]
    return {"E": BoundaryData.for_E(E.gamma, qhat),
            "Pplus": BoundaryData(bottom_f2=CurveData(P.beta, q2))}


def phi_data(region: CompositeRegion, q1, q2, q) -> dict[str, BoundaryData]:
    """``q1`` (f1) on the lower increasing curve, ``q2`` (f2) on the upper one, ``q`` (both) on the decreasing curve."""
    byl = dict(zip(region.labels, region.pieces))
    E, P, Ph = byl["XiMinus/E"], byl["XiMinus/Pminus"], byl["Pplus"]
    return {"XiMinus/E": BoundaryData.for_E(E.gamma, q),
            "XiMinus/Pminus": BoundaryData(left_f1=CurveData(P.beta, q1)),
            "Pplus": BoundaryData(bottom_f2=CurveData(Ph.beta, q2))}


# ---------------------------------------------------------------------------
# results


@dataclass
class EdgeTrace:
    """Outflow values of a solved piece: per row at the right edge, per column at the top edge."""

    rows: dict = field(default_factory=dict)   # j -> (x1_end, f1, f2)
    cols: dict = field(default_factory=dict)   # i -> (x2_end, f1, f2)


@dataclass
class PieceReport:
    label: str
    kind: str
    depth: int
    iterations: int
    history: list
    nodes: int


@dataclass
class GridPairField:
    """Solution values on a node grid; ``NaN`` outside the solved set."""

    x1: np.ndarray
    x2: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    mask: np.ndarray
    region: Optional[PlanarRegion] = None
    reports: list = field(default_factory=list)
    edge_traces: list = field(default_factory=list)

    @property
    def steps(self) -> tuple[float, float]:
        return float(self.x1[1] - self.x1[0]), float(self.x2[1] - self.x2[0])

    @property
    def history(self) -> dict:
        return {r.label: r.history for r in self.reports}

    def copy(self) -> "GridPairField":
        return GridPairField(self.x1.copy(), self.x2.copy(), self.f1.copy(), self.f2.copy(),
                             self.mask.copy(), self.region, list(self.reports), list(self.edge_traces))

    def l2_norm(self) -> float:
        h1, h2 = self.steps
        m = self.mask
        return float(np.sqrt(h1 * h2 * np.sum(self.f1[m] ** 2 + self.f2[m] ** 2)))

    def l2_distance(self, other: "GridPairField") -> float:
        h1, h2 = self.steps
        m = self.mask & other.mask
        d = (self.f1 - other.f1)[m] ** 2 + (self.f2 - other.f2)[m] ** 2
        return float(np.sqrt(h1 * h2 * np.sum(d)))

    def interpolator(self):
        f1 = _ghost_fill(self.f1, self.mask)
        f2 = _ghost_fill(self.f2, self.mask)
        i1 = RegularGridInterpolator((self.x1, self.x2), f1, bounds_error=False, fill_value=None)
        i2 = RegularGridInterpolator((self.x1, self.x2), f2, bounds_error=False, fill_value=None)
        return i1, i2

    def interpolate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts, dtype=float)
        i1, i2 = self.interpolator()
        flat = pts.reshape(-1, 2)
        return i1(flat).reshape(pts.shape[:-1]), i2(flat).reshape(pts.shape[:-1])

    def to_csv(self, path) -> None:
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "f1", "f2"])
            for j in range(self.x2.size):
                for i in range(self.x1.size):
                    if self.mask[i, j]:
                        w.writerow([repr(float(X1[i, j])), repr(float(X2[i, j])),
                                    repr(float(self.f1[i, j])), repr(float(self.f2[i, j]))])

    def to_binary(self, path) -> None:
        """Header: magic, ``nx, ny`` (int64), ``h1, h2, x1_0, x2_0`` (float64); then f1 and f2.

        Each field is ``ny * nx`` little-endian doubles in row-major order with
        rows of constant ``x2``; nodes outside the solved set hold NaN.
        """
        h1, h2 = self.steps
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<qq", self.x1.size, self.x2.size))
            fh.write(struct.pack("<dddd", h1, h2, self.x1[0], self.x2[0]))
            for f in (self.f1, self.f2):
                fh.write(np.where(self.mask, f, np.nan).T.astype("<f8").tobytes())


def read_binary(path) -> GridPairField:
    with open(path, "rb") as fh:
        if fh.read(8) != BINARY_MAGIC:
            raise SolverError("not a grid dump")
        nx, ny = struct.unpack("<qq", fh.read(16))
        h1, h2, o1, o2 = struct.unpack("<dddd", fh.read(32))
        data = np.frombuffer(fh.read(), dtype="<f8")
    f1 = data[: nx * ny].reshape(ny, nx).T.copy()
    f2 = data[nx * ny:].reshape(ny, nx).T.copy()
    x1 = o1 + h1 * np.arange(nx)
    x2 = o2 + h2 * np.arange(ny)
    return GridPairField(x1, x2, f1, f2, np.isfinite(f1))


def _ghost_fill(F: np.ndarray, mask: np.ndarray, layers: int = 2) -> np.ndarray:
    """Extend masked values linearly along rows, then columns, then by nearest value."""
    G = np.where(mask, F, np.nan).astype(float)
    for axis in (0, 1):
        for _ in range(layers):
            H = G.copy()
            known = np.isfinite(G)
            if axis == 1:
                G, H, known = G.T, H.T, known.T
            n = G.shape[0]
            for i in range(n):
                miss = ~known[i]
                if not miss.any():
                    continue
                if i + 2 < n:
                    ok = miss & known[i + 1] & known[i + 2]
                    H[i, ok] = 2 * G[i + 1, ok] - G[i + 2, ok]
                    miss = miss & ~ok
                if i - 2 >= 0:
                    ok = miss & known[i - 1] & known[i - 2]
                    H[i, ok] = 2 * G[i - 1, ok] - G[i - 2, ok]
            G = H.T if axis == 1 else H
    if np.isnan(G).any() and np.isfinite(G).any():
        from scipy.ndimage import distance_transform_edt
        idx = distance_transform_edt(np.isnan(G), return_distances=False, return_indices=True)
        G = G[tuple(idx)]
    return np.nan_to_num(G)


# ---------------------------------------------------------------------------
# piece operator


def _extrap(a0, a1, frac):
    """Value at distance ``frac`` steps beyond ``a0`` on the side away from ``a1``."""
    return a0 + (a0 - a1) * frac


class _UpstreamResolver:
    """Looks up inflow values on edges shared with already solved pieces."""

    def __init__(self, x1, x2, F1, F2, known, traces: list[EdgeTrace], tol: float):
        self.x1, self.x2 = x1, x2
        self.F1, self.F2, self.known = F1, F2, known
        self.traces = traces
        self.tol = tol

    def row_start(self, j: int, c: float) -> Optional[tuple[float, float]]:
        for tr in self.traces:
            hit = tr.rows.get(j)
            if hit is not None and abs(hit[0] - c) <= self.tol:
                return hit[1], hit[2]
        return self._line(self.x1, self.F1[:, j], self.F2[:, j], self.known[:, j], c)

    def col_start(self, i: int, c: float) -> Optional[tuple[float, float]]:
        for tr in self.traces:
            hit = tr.cols.get(i)
            if hit is not None and abs(hit[0] - c) <= self.tol:
                return hit[1], hit[2]
        return self._line(self.x2, self.F1[i, :], self.F2[i, :], self.known[i, :], c)

    @staticmethod
    def _line(axis, f1, f2, known, c):
        idx = np.nonzero(known)[0]
        if idx.size == 0:
            return None
        if idx.size == 1:
            k = idx[0]
            if abs(axis[k] - c) > (axis[1] - axis[0]):
                return None
            return f1[k], f2[k]
        # two nearest known nodes, interpolating or extrapolating linearly
        order = idx[np.argsort(np.abs(axis[idx] - c), kind="stable")[:2]]
        a, b = sorted(order)
        if abs(axis[a] - c) > 2.5 * (axis[1] - axis[0]) and abs(axis[b] - c) > 2.5 * (axis[1] - axis[0]):
            return None
        w = (c - axis[a]) / (axis[b] - axis[a])
        return (1 - w) * f1[a] + w * f1[b], (1 - w) * f2[a] + w * f2[b]


class _PieceOperator:
    """Discrete integral operator of one primitive piece on the shared grid."""

    def __init__(self, piece: PlanarRegion, x1: np.ndarray, x2: np.ndarray, system: CharSystem,
                 coef: dict, data: BoundaryData, resolver: Optional[_UpstreamResolver]):
        self.piece = piece
        self.x1, self.x2 = x1, x2
        self.h1 = float(x1[1] - x1[0])
        self.h2 = float(x2[1] - x2[0])
        self.system = system
        self.coef = coef
        tol = 1e-9 * min(self.h1, self.h2)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        self.mask = piece.contains(np.stack([X1, X2], axis=-1), closed=True, tol=tol)
        if not self.mask.any():
            raise SolverError(f"piece {piece!r} contains no grid nodes")
        nx, ny = self.mask.shape
        bx0, bx1, by0, by1 = piece.bbox()

        # rows: f1 runs rightwards from the row start
        rows = np.nonzero(self.mask.any(axis=0))[0]
        self.rows = rows
        self.rs = np.array([np.argmax(self.mask[:, j]) for j in rows])
        self.re = np.array([nx - 1 - np.argmax(self.mask[::-1, j]) for j in rows])
        y = np.clip(x2[rows], by0, by1)
        self.rc = np.minimum(piece.left(y), x1[self.rs])
        self.rr = np.maximum(piece.right(y), x1[self.re])
        # columns: f2 runs upwards from the column start
        cols = np.nonzero(self.mask.any(axis=1))[0]
        self.cols = cols
        self.cs = np.array([np.argmax(self.mask[i, :]) for i in cols])
        self.ce = np.array([ny - 1 - np.argmax(self.mask[i, ::-1]) for i in cols])
        x = np.clip(x1[cols], bx0, bx1)
        self.cc = np.minimum(piece.bottom(x), x2[self.cs])
        self.ct = np.maximum(piece.top(x), x2[self.ce])
        # rows/columns crossing the piece between nodes (outflow traces only)
        self.empty_rows = [j for j in range(ny) if j not in set(rows.tolist())
                           and by0 - tol <= x2[j] <= by1 + tol]
        self.empty_cols = [i for i in range(nx) if i not in set(cols.tolist())
                           and bx0 - tol <= x1[i] <= bx1 + tol]

        self.rcoef = system.evaluate(self.rc, x2[rows])
        self.ccoef = system.evaluate(x1[cols], self.cc)

        # inflow data
        self._data, self._resolver = data, resolver
        self.rf2_data = None
        self.cf1_data = None
        self.rf1 = self._inflow(data.left_f1, self.rc, x2[rows], 0, rows, resolver)
        self.cf2 = self._inflow(data.bottom_f2, x1[cols], self.cc, 1, cols, resolver)
        if data.left_f2 is not None and not isinstance(data.left_f2, _Upstream):
            self.rf2_data = _eval_data(data.left_f2, self.rc, x2[rows], 0)
        if data.bottom_f1 is not None and not isinstance(data.bottom_f1, _Upstream):
            self.cf1_data = _eval_data(data.bottom_f1, x1[cols], self.cc, 1)
        if not (np.all(np.isfinite(self.rf1)) and np.all(np.isfinite(self.cf2))):
            raise SolverError("boundary data is not finite")

    def _inflow(self, entry, px1, px2, axis, lines, resolver):
        if entry is None:
            raise SolverError("missing inflow data")
        if not isinstance(entry, _Upstream):
            return _eval_data(entry, px1, px2, axis)
        if resolver is None:
            raise SolverError("UPSTREAM data requires previously solved pieces")
        out = np.empty(len(lines))
        for k, line in enumerate(lines):
            hit = resolver.row_start(line, px1[k]) if axis == 0 else resolver.col_start(line, px2[k])
            if hit is None:
                raise SolverError(f"no upstream value for {self.piece!r} at {(px1[k], px2[k])}")
            out[k] = hit[axis]
        return out

    # ------------------------------------------------------------------
    def data_norm(self) -> float:
        return float(np.sqrt(self.h2 * np.sum(self.rf1 ** 2) + self.h1 * np.sum(self.cf2 ** 2)))

    def source_norm(self) -> float:
        m = self.mask
        return float(np.sqrt(self.h1 * self.h2 * np.sum(self.coef["p1"][m] ** 2 + self.coef["p2"][m] ** 2)))

    def _start_other(self, F, first, last, frac_num, step, along_rows: bool):
        """Linear extrapolation of ``F`` to the start point of each line."""
        if along_rows:
            a0 = F[first, self.rows]
            nxt = np.minimum(first + 1, last)
            a1 = F[nxt, self.rows]
        else:
            a0 = F[self.cols, first]
            nxt = np.minimum(first + 1, last)
            a1 = F[self.cols, nxt]
        frac = np.where(nxt > first, frac_num / step, 0.0)
        return _extrap(a0, a1, frac)

    def integrands(self, F1, F2):
        c = self.coef
        G1 = c["a11"] * F1 + c["a12"] * F2 + c["p1"]
        G2 = c["a21"] * F1 + c["a22"] * F2 + c["p2"]
        return np.where(self.mask, G1, 0.0), np.where(self.mask, G2, 0.0)

    def apply(self, F1, F2):
        F1 = np.where(self.mask, F1, 0.0)
        F2 = np.where(self.mask, F2, 0.0)
        G1, G2 = self.integrands(F1, F2)
        rows, cols = self.rows, self.cols
        # integrand at the row starts
        d1 = self.x1[self.rs] - self.rc
        f2s = self.rf2_data if self.rf2_data is not None else \
            self._start_other(F2, self.rs, self.re, d1, self.h1, True)
        rc = self.rcoef
        g1s = rc["a11"] * self.rf1 + rc["a12"] * f2s + rc["p1"]
        d2 = self.x2[self.cs] - self.cc
        f1s = self.cf1_data if self.cf1_data is not None else \
            self._start_other(F1, self.cs, self.ce, d2, self.h2, False)
        cc = self.ccoef
        g2s = cc["a21"] * f1s + cc["a22"] * self.cf2 + cc["p2"]

        C1 = np.zeros_like(G1)
        C1[1:, :] = np.cumsum(0.5 * self.h1 * (G1[1:, :] + G1[:-1, :]), axis=0)
        C2 = np.zeros_like(G2)
        C2[:, 1:] = np.cumsum(0.5 * self.h2 * (G2[:, 1:] + G2[:, :-1]), axis=1)

        N1 = np.zeros_like(F1)
        base1 = self.rf1 + 0.5 * d1 * (g1s + G1[self.rs, rows]) - C1[self.rs, rows]
        N1[:, rows] = base1[None, :] + C1[:, rows]
        N2 = np.zeros_like(F2)
        base2 = self.cf2 + 0.5 * d2 * (g2s + G2[cols, self.cs]) - C2[cols, self.cs]
        N2[cols, :] = base2[:, None] + C2[cols, :]
        return np.where(self.mask, N1, 0.0), np.where(self.mask, N2, 0.0)

    def increment(self, A1, A2, B1, B2) -> float:
        m = self.mask
        return float(np.sqrt(self.h1 * self.h2 * np.sum((A1 - B1)[m] ** 2 + (A2 - B2)[m] ** 2)))

    def edge_trace(self, F1, F2) -> EdgeTrace:
        tr = EdgeTrace()
        x1, x2 = self.x1, self.x2
        G1, G2 = self.integrands(F1, F2)
        for k, j in enumerate(self.rows):
            s, e, r = self.rs[k], self.re[k], self.rr[k]
            prev = max(e - 1, s)
            frac = (r - x1[e]) / self.h1 if prev < e else 0.0
            f1x = _extrap(F1[e, j], F1[prev, j], frac)
            f2x = _extrap(F2[e, j], F2[prev, j], frac)
            ce = self.system.evaluate(r, x2[j])
            g_end = ce["a11"] * f1x + ce["a12"] * f2x + ce["p1"]
            f1_end = F1[e, j] + 0.5 * (r - x1[e]) * (G1[e, j] + g_end)
            tr.rows[int(j)] = (float(r), float(f1_end), float(f2x))
        for k, i in enumerate(self.cols):
            s, e, t = self.cs[k], self.ce[k], self.ct[k]
            prev = max(e - 1, s)
            frac = (t - x2[e]) / self.h2 if prev < e else 0.0
            f1x = _extrap(F1[i, e], F1[i, prev], frac)
            f2x = _extrap(F2[i, e], F2[i, prev], frac)
            ce = self.system.evaluate(x1[i], t)
            g_end = ce["a21"] * f1x + ce["a22"] * f2x + ce["p2"]
            f2_end = F2[i, e] + 0.5 * (t - x2[e]) * (G2[i, e] + g_end)
            tr.cols[int(i)] = (float(t), float(f1x), float(f2_end))
        self._thin_traces(tr, F1, F2)
        return tr

    def _point_inflow(self, entry, px1, px2, axis, line, fallback):
        """Inflow value at one start point; ``fallback`` when no data reaches it."""
        try:
            v = self._inflow(entry, np.array([px1]), np.array([px2]), axis, [line], self._resolver)[0]
        except SolverError:
            return fallback
        return float(v) if np.isfinite(v) else fallback

    def _thin_traces(self, tr: EdgeTrace, F1, F2):
        """Outflow values on grid lines that cross the piece between nodes."""
        idx = np.argwhere(self.mask)
        pts = np.stack([self.x1[idx[:, 0]], self.x2[idx[:, 1]]], axis=-1)
        bx0, bx1, by0, by1 = self.piece.bbox()

        def nearest(p):
            k = int(np.argmin(np.sum((pts - p) ** 2, axis=-1)))
            i, j = idx[k]
            return F1[i, j], F2[i, j]

        for j in self.empty_rows:
            y = float(np.clip(self.x2[j], by0, by1))
            c, r = float(self.piece.left(np.array(y))), float(self.piece.right(np.array(y)))
            if r < c:
                continue
            f1n, f2n = nearest(np.array([c, y]))
            ce = self.system.evaluate(c, y)
            f1c = self._point_inflow(self._data.left_f1, c, y, 0, j, f1n)
            g = ce["a11"] * f1c + ce["a12"] * f2n + ce["p1"]
            tr.rows[int(j)] = (r, float(f1c + (r - c) * g), float(f2n))
        for i in self.empty_cols:
            x = float(np.clip(self.x1[i], bx0, bx1))
            c, t = float(self.piece.bottom(np.array(x))), float(self.piece.top(np.array(x)))
            if t < c:
                continue
            f1n, f2n = nearest(np.array([x, c]))
            ce = self.system.evaluate(x, c)
            f2n = self._point_inflow(self._data.bottom_f2, x, c, 1, i, f2n)
            g = ce["a21"] * f1n + ce["a22"] * f2n + ce["p2"]
            tr.cols[int(i)] = (t, float(f1n), float(f2n + (t - c) * g))


# ---------------------------------------------------------------------------
# solving


def _default_tol(op: _PieceOperator) -> float:
    return 1e-10 * (1.0 + op.data_norm() + op.source_norm())


def _iterate(op: _PieceOperator, tol: Optional[float], max_iter: int, F1=None, F2=None):
    tol = _default_tol(op) if tol is None else tol
    F1 = np.zeros_like(op.coef["a11"]) if F1 is None else np.where(op.mask, F1, 0.0)
    F2 = np.zeros_like(op.coef["a11"]) if F2 is None else np.where(op.mask, F2, 0.0)
    history: list[float] = []
    for n in range(1, max_iter + 1):
        N1, N2 = op.apply(F1, F2)
        if not (np.all(np.isfinite(N1)) and np.all(np.isfinite(N2))):
            raise ContractionFailure("Picard iterate is not finite", history)
        inc = op.increment(N1, N2, F1, F2)
        history.append(inc)
        F1, F2 = N1, N2
        size = float(np.sqrt(op.h1 * op.h2 * np.sum(F1[op.mask] ** 2 + F2[op.mask] ** 2)))
        # rounding floor: increments cannot drop below a few ulps of the iterate
        if inc <= tol or inc <= 64 * np.finfo(float).eps * size:
            return F1, F2, history
        if n > BURN_IN and history[-2] > 0 and inc / history[-2] >= RATIO_LIMIT:
            raise ContractionFailure(
                f"Picard increments stopped contracting (ratio {inc / history[-2]:.3g} at step {n})", history)
    raise ContractionFailure(f"no convergence in {max_iter} iterations", history)


def _grid_axes(region: PlanarRegion, grid) -> tuple[np.ndarray, np.ndarray]:
    if grid is None:
        grid = 129
    if isinstance(grid, RegionGrid):
        return grid.x1, grid.x2
    if isinstance(grid, (int, np.integer)):
        x0, x1, y0, y1 = region.bbox()
        return np.linspace(x0, x1, int(grid)), np.linspace(y0, y1, int(grid))
    x1, x2 = grid
    return np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)


def _coefficients(system: CharSystem, x1, x2) -> dict:
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    return system.evaluate(X1, X2)


def _check_finite(coef: dict, mask: np.ndarray):
    for k, v in coef.items():
        if not np.all(np.isfinite(v[mask])):
            raise SolverError(f"coefficient {k} is not finite on the region")


def picard_apply(region: PlanarRegion, system: CharSystem, bc: BoundaryData,
                 f: GridPairField) -> GridPairField:
    """One application of the discrete integral operator of a primitive region."""
    if not region.is_primitive:
        raise SolverError("picard_apply works on primitive regions only")
    coef = _coefficients(system, f.x1, f.x2)
    op = _PieceOperator(region, f.x1, f.x2, system, coef, bc, None)
    N1, N2 = op.apply(np.nan_to_num(f.f1), np.nan_to_num(f.f2))
    return GridPairField(f.x1, f.x2, np.where(op.mask, N1, np.nan), np.where(op.mask, N2, np.nan),
                         op.mask.copy(), region)


def solve_primitive(region: PlanarRegion, system: CharSystem, bc: BoundaryData,
                    tol: Optional[float] = None, grid=None, max_iter: int = MAX_ITER,
                    initial: Optional[GridPairField] = None) -> GridPairField:
    """Picard iteration on a single primitive piece, without subdivision."""
    if not region.is_primitive:
        raise SolverError("solve_primitive works on primitive regions only")
    x1, x2 = _grid_axes(region, grid)
    coef = _coefficients(system, x1, x2)
    op = _PieceOperator(region, x1, x2, system, coef, bc, None)
    _check_finite(coef, op.mask)
    F1 = F2 = None
    if initial is not None:
        F1, F2 = np.nan_to_num(initial.f1), np.nan_to_num(initial.f2)
    F1, F2, hist = _iterate(op, tol, max_iter, F1, F2)
    tr = op.edge_trace(F1, F2)
    rep = PieceReport(region.kind, region.kind, 0, len(hist), hist, int(op.mask.sum()))
    return GridPairField(x1, x2, np.where(op.mask, F1, np.nan), np.where(op.mask, F2, np.nan),
                         op.mask.copy(), region, [rep], [tr])


def _child_data(parent: PlanarRegion, data: BoundaryData, child_labels: Sequence[str]) -> list[BoundaryData]:
    """Inflow data of the parts produced by :func:`split_piece`."""
    U = UPSTREAM
    full = data
    if isinstance(parent, ERegion):
        return [full if lab.startswith("E") else BoundaryData(U, U) for lab in child_labels]
    if isinstance(parent, RRegion):
        return [BoundaryData(data.left_f1, data.bottom_f2), BoundaryData(U, data.bottom_f2),
                BoundaryData(data.left_f1, U), BoundaryData(U, U)]
    if isinstance(parent, PMinusRegion):
        return [BoundaryData(data.left_f1, data.bottom_f2),
                BoundaryData(U, data.bottom_f2),
                BoundaryData(data.left_f1, U)]
    if isinstance(parent, PPlusRegion):
        return [BoundaryData(data.left_f1, data.bottom_f2),
                BoundaryData(data.left_f1, U),
                BoundaryData(U, data.bottom_f2)]
    raise SolverError(f"cannot split {parent!r}")


def solve_region(region: PlanarRegion, system: CharSystem, bc, tol: Optional[float] = None,
                 grid=None, max_iter: int = MAX_ITER, max_depth: int = MAX_DEPTH) -> GridPairField:
    """Solve on any region kind, splitting pieces that fail to contract.

    ``bc`` is a :class:`BoundaryData` for primitive regions, or a mapping from
    piece labels of a composite region to BoundaryData; pieces that are not
    listed read all inflow values from earlier pieces.
    """
    x1, x2 = _grid_axes(region, grid)
    if x1.size < 3 or x2.size < 3:
        raise SolverError("grid needs at least 3 nodes per direction")
    coef = _coefficients(system, x1, x2)
    if isinstance(region, CompositeRegion):
        pieces = list(zip(region.labels, region.pieces))
        bc = dict(bc or {})
        queue = [(lab, p, bc.get(lab, BoundaryData()), 0) for lab, p in pieces]
    else:
        if not isinstance(bc, BoundaryData):
            raise SolverError("primitive regions take a BoundaryData")
        queue = [(region.kind, region, bc, 0)]

    shape = (x1.size, x2.size)
    F1 = np.zeros(shape)
    F2 = np.zeros(shape)
    known = np.zeros(shape, dtype=bool)
    traces: list[EdgeTrace] = []
    reports: list[PieceReport] = []
    h = min(x1[1] - x1[0], x2[1] - x2[0])
    resolver = _UpstreamResolver(x1, x2, F1, F2, known, traces, 1e-9 * h)

    while queue:
        lab, piece, data, depth = queue.pop(0)
        op = _PieceOperator(piece, x1, x2, system, coef, data, resolver)
        _check_finite(coef, op.mask)
        try:
            P1, P2, hist = _iterate(op, tol, max_iter)
        except ContractionFailure as exc:
            if depth >= max_depth:
                raise UnsolvableInstanceError(
                    f"piece {lab} still not contracting at subdivision depth {depth}") from exc
            parts = split_piece(piece)
            child = _child_data(piece, data, parts.labels)
            queue[0:0] = [(f"{lab}/{cl}", cp, cd, depth + 1)
                          for cl, cp, cd in zip(parts.labels, parts.pieces, child)]
            continue
        new = op.mask & ~known
        F1[new] = P1[new]
        F2[new] = P2[new]
        known |= op.mask
        traces.append(op.edge_trace(P1, P2))
        reports.append(PieceReport(lab, piece.kind, depth, len(hist), hist, int(op.mask.sum())))

    return GridPairField(x1, x2, np.where(known, F1, np.nan), np.where(known, F2, np.nan),
                         known, region, reports, traces)


# ---------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    s: np.ndarray          # arclength along the locus
    points: np.ndarray
    f1: np.ndarray
    f2: np.ndarray

    def _norm(self, v) -> float:
        if self.s.size < 2:
            return 0.0
        return float(np.sqrt(trapezoid(v, self.s)))

    @property
    def norm_f1(self) -> float:
        return self._norm(self.f1 ** 2)

    @property
    def norm_f2(self) -> float:
        return self._norm(self.f2 ** 2)

    @property
    def norm(self) -> float:
        return self._norm(self.f1 ** 2 + self.f2 ** 2)


@dataclass
class Segment:
    p0: Sequence[float]
    p1: Sequence[float]

    def sample(self, region, n):
        t = np.linspace(0.0, 1.0, n)
        p0, p1 = np.asarray(self.p0, float), np.asarray(self.p1, float)
        return p0 + t[:, None] * (p1 - p0)


@dataclass
class VerticalLine:
    x1: float
    x2_range: Optional[tuple] = None

    def sample(self, region, n):
        lo, hi = self.x2_range or region.bbox()[2:]
        return Segment((self.x1, lo), (self.x1, hi)).sample(region, n)


@dataclass
class HorizontalLine:
    x2: float
    x1_range: Optional[tuple] = None

    def sample(self, region, n):
        lo, hi = self.x1_range or region.bbox()[:2]
        return Segment((lo, self.x2), (hi, self.x2)).sample(region, n)


@dataclass
class Diagonal:
    """``s -> start + s (1, 1)`` for ``s`` in ``[0, length]``."""

    start: Sequence[float]
    length: Optional[float] = None

    def sample(self, region, n):
        st = np.asarray(self.start, float)
        if self.length is None:
            x0, x1, y0, y1 = region.bbox()
            length = min(x1 - st[0], y1 - st[1])
        else:
            length = self.length
        return Segment(st, st + length).sample(region, n)


@dataclass
class CurveLocus:
    curve: PlanarCurve

    def sample(self, region, n):
        return self.curve(np.linspace(self.curve.t_start, self.curve.t_end, n))


def extract_trace(field: GridPairField, locus, n: Optional[int] = None) -> Trace:
    """Sample the field along a locus (bilinear interpolation) restricted to the solved region."""
    n = n or 2 * max(field.x1.size, field.x2.size) + 1
    region = field.region
    bbox = region.bbox() if region is not None else (field.x1[0], field.x1[-1], field.x2[0], field.x2[-1])

    class _Box:
        def bbox(self):
            return bbox

    pts = np.asarray(locus.sample(region if region is not None else _Box(), n), dtype=float)
    h = min(field.steps)
    if region is not None:
        inside = region.contains(pts, closed=True, tol=1e-9 * h)
    else:
        inside = ((pts[:, 0] >= bbox[0]) & (pts[:, 0] <= bbox[1]) &
                  (pts[:, 1] >= bbox[2]) & (pts[:, 1] <= bbox[3]))
    if inside.sum() < 1:
        raise EmptyTraceError("locus does not meet the region")
    pts = pts[inside]
    ds = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
    s = np.concatenate([[0.0], np.cumsum(ds)])
    f1, f2 = field.interpolate(pts)
    return Trace(s, pts, f1, f2)
