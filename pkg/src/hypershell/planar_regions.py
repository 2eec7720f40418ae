"""Planar regions bounded by noncharacteristic curves.

Every primitive region is described row-wise and column-wise: on the row at
height ``x2`` it spans ``left(x2) <= x1 <= right(x2)`` and on the column at
``x1`` it spans ``bottom(x1) <= x2 <= top(x1)``.  The first component of a
characteristic field is transported to the right from ``left`` and the second
upward from ``bottom``, which is what the solver relies on.

Composite regions are ordered lists of primitive pieces; the order is a valid
solve order (each piece's inflow edges are covered by data or by earlier
pieces).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.integrate import trapezoid
from scipy.optimize import brentq

__all__ = [
    "RegionError",
    "InvalidCurveError",
    "IncompatibleCurvesError",
    "PlanarCurve",
    "PlanarRegion",
    "ERegion",
    "RRegion",
    "PMinusRegion",
    "PPlusRegion",
    "CompositeRegion",
    "make_region",
    "membership",
    "subdivide_E",
    "split_piece",
    "RegionGrid",
    "region_to_json",
    "region_from_json",
]

MONO_MARGIN = 1e-10
PRIMITIVE_KINDS = ("E", "R", "Pminus", "Pplus")
COMPOSITE_KINDS = ("XiMinus", "XiPlus", "Phi", "Union")


class RegionError(ValueError):
    pass


class InvalidCurveError(RegionError):
    pass


class IncompatibleCurvesError(RegionError):
    pass


# ---------------------------------------------------------------------------
# curves


class PlanarCurve:
    """Monotone planar curve ``t -> (c1(t), c2(t))`` on ``[t_start, t_end]``.

    ``kind`` is ``"E"`` (first coordinate increasing, second decreasing) or
    ``"P"`` (both increasing).  The curve is held as dense samples with
    monotone cubic interpolation; when an exact callable is supplied it is used
    for forward evaluation and to polish the inverse maps by Newton steps.
    """

    def __init__(self, t: np.ndarray, pts: np.ndarray, kind: str,
                 fn: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        if kind not in ("E", "P"):
            raise InvalidCurveError(f"curve kind must be 'E' or 'P', got {kind!r}")
        t = np.asarray(t, dtype=float)
        pts = np.asarray(pts, dtype=float)
        if t.ndim != 1 or pts.shape != (t.size, 2) or t.size < 2:
            raise InvalidCurveError("curve samples must be t:(n,) and points:(n,2) with n >= 2")
        if np.any(np.diff(t) <= 0):
            raise InvalidCurveError("curve parameter samples must increase")
        self.t = t
        self.pts = pts
        self.kind = kind
        self.fn = fn
        self._validate()
        self._c1 = PchipInterpolator(t, pts[:, 0])
        self._c2 = PchipInterpolator(t, pts[:, 1])
        self._d1 = self._c1.derivative()
        self._d2 = self._c2.derivative()
        self._inv1 = PchipInterpolator(pts[:, 0], t)
        if kind == "E":
            self._inv2 = PchipInterpolator(pts[::-1, 1], t[::-1])
        else:
            self._inv2 = PchipInterpolator(pts[:, 1], t)

    # construction ---------------------------------------------------------
    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], t_start: float, t_end: float,
                      kind: str, samples: int = 2049) -> "PlanarCurve":
        t = np.linspace(t_start, t_end, samples)
        pts = np.asarray(fn(t), dtype=float)
        return cls(t, pts, kind, fn=fn)

    @classmethod
    def segment(cls, p0: Sequence[float], p1: Sequence[float], t_end: float = 1.0,
                t_start: float = 0.0) -> "PlanarCurve":
        """Straight segment from ``p0`` (at ``t_start``) to ``p1`` (at ``t_end``)."""
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        d = p1 - p0
        kind = "E" if (d[0] > 0 and d[1] < 0) else "P"
        span = t_end - t_start

        def fn(t):
            s = (np.asarray(t, dtype=float) - t_start) / span
            return p0 + s[..., None] * d

        return cls.from_function(fn, t_start, t_end, kind, samples=3)

    def _validate(self) -> None:
        d = np.diff(self.pts, axis=0) / np.diff(self.t)[:, None]
        if self.kind == "E":
            ok = np.all(d[:, 0] > MONO_MARGIN) and np.all(d[:, 1] < -MONO_MARGIN)
            need = "first coordinate increasing and second decreasing"
        else:
            ok = np.all(d[:, 0] > MONO_MARGIN) and np.all(d[:, 1] > MONO_MARGIN)
            need = "both coordinates increasing"
        if not ok:
            raise InvalidCurveError(f"curve of kind {self.kind} must have {need}")

    # evaluation -------------------------------------------------------------
    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.fn is not None:
            return np.asarray(self.fn(t), dtype=float)
        return np.stack([self._c1(t), self._c2(t)], axis=-1)

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([self._d1(t), self._d2(t)], axis=-1)

    @property
    def start(self) -> np.ndarray:
        return self(self.t_start)

    @property
    def end(self) -> np.ndarray:
        return self(self.t_end)

    def _polish(self, t, target, comp: int):
        if self.fn is None:
            return t
        d = self._d1 if comp == 0 else self._d2
        for _ in range(3):
            val = self(t)[..., comp]
            t = t - (val - target) / d(t)
            t = np.clip(t, self.t_start, self.t_end)
        return t

    def t_at_x1(self, x1):
        x1 = np.clip(np.asarray(x1, dtype=float), self.pts[0, 0], self.pts[-1, 0])
        return self._polish(self._inv1(x1), x1, 0)

    def t_at_x2(self, x2):
        lo, hi = np.min(self.pts[:, 1]), np.max(self.pts[:, 1])
        x2 = np.clip(np.asarray(x2, dtype=float), lo, hi)
        return self._polish(self._inv2(x2), x2, 1)

    def x1_at_x2(self, x2):
        return self(self.t_at_x2(x2))[..., 0]

    def x2_at_x1(self, x1):
        return self(self.t_at_x1(x1))[..., 1]

    def restrict(self, ta: float, tb: float) -> "PlanarCurve":
        n = max(3, int(np.ceil(self.t.size * (tb - ta) / (self.t_end - self.t_start))) | 1)
        t = np.linspace(ta, tb, n)
        return PlanarCurve(t, self(t), self.kind, fn=self.fn)

    def reparametrized(self, phi: Callable, phi_inv: Callable) -> "PlanarCurve":
        """Same point set under the increasing change of parameter ``t = phi(s)``."""
        s = phi_inv(self.t)
        fn = (lambda ss: self(phi(np.asarray(ss, dtype=float))))
        return PlanarCurve(s, self.pts, self.kind, fn=fn)

    def to_json(self) -> dict:
        return {"kind": self.kind, "t": self.t.tolist(), "points": self.pts.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "PlanarCurve":
        return cls(np.asarray(d["t"]), np.asarray(d["points"]), d["kind"])


# ---------------------------------------------------------------------------
# regions


class PlanarRegion:
    kind: str = ""

    @property
    def is_primitive(self) -> bool:
        return self.kind in PRIMITIVE_KINDS

    def bbox(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def extent(self) -> float:
        x0, x1, y0, y1 = self.bbox()
        return max(x1 - x0, y1 - y0)

    def contains(self, x, closed: bool = False, tol: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def primitives(self) -> list["PlanarRegion"]:
        return [self]


def _as_pts(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x


class _PrimitiveRegion(PlanarRegion):
    """Shared row/column machinery for primitive kinds."""

    def left(self, x2):
        raise NotImplementedError

    def right(self, x2):
        raise NotImplementedError

    def bottom(self, x1):
        raise NotImplementedError

    def top(self, x1):
        raise NotImplementedError

    def contains(self, x, closed: bool = False, tol: float = 0.0) -> np.ndarray:
        x = _as_pts(x)
        x1, x2 = x[..., 0], x[..., 1]
        bx0, bx1, by0, by1 = self.bbox()
        if closed:
            in_y = (x2 >= by0 - tol) & (x2 <= by1 + tol)
            in_x = (x1 >= bx0 - tol) & (x1 <= bx1 + tol)
            y = np.clip(x2, by0, by1)
            return in_y & in_x & (x1 >= self.left(y) - tol) & (x1 <= self.right(y) + tol)
        in_y = (x2 > by0) & (x2 < by1)
        y = np.clip(x2, by0, by1)
        return in_y & (x1 > self.left(y)) & (x1 < self.right(y))

    def area(self, n: int = 4001) -> float:
        _, _, y0, y1 = self.bbox()
        y = np.linspace(y0, y1, n)
        return float(trapezoid(np.maximum(self.right(y) - self.left(y), 0.0), y))


class ERegion(_PrimitiveRegion):
    """Region to the upper right of a decreasing curve, closed off by the corner lines."""

    kind = "E"

    def __init__(self, gamma: PlanarCurve):
        if gamma.kind != "E":
            raise InvalidCurveError("E regions need a curve with first coordinate increasing, second decreasing")
        self.gamma = gamma

    def bbox(self):
        g0, g1 = self.gamma.start, self.gamma.end
        return (float(g0[0]), float(g1[0]), float(g1[1]), float(g0[1]))

    def left(self, x2):
        return self.gamma.x1_at_x2(x2)

    def right(self, x2):
        return np.full(np.shape(x2), self.bbox()[1])

    def bottom(self, x1):
        return self.gamma.x2_at_x1(x1)

    def top(self, x1):
        return np.full(np.shape(x1), self.bbox()[3])

    def __repr__(self):
        return f"ERegion(start={self.gamma.start.tolist()}, end={self.gamma.end.tolist()})"


class RRegion(_PrimitiveRegion):
    kind = "R"

    def __init__(self, z: Sequence[float], a: float, b: float):
        if a < 0 or b < 0:
            raise RegionError("rectangle sides must be nonnegative")
        self.z = (float(z[0]), float(z[1]))
        self.a = float(a)
        self.b = float(b)

    def bbox(self):
        return (self.z[0], self.z[0] + self.a, self.z[1], self.z[1] + self.b)

    def left(self, x2):
        return np.full(np.shape(x2), self.z[0])

    def right(self, x2):
        return np.full(np.shape(x2), self.z[0] + self.a)

    def bottom(self, x1):
        return np.full(np.shape(x1), self.z[1])

    def top(self, x1):
        return np.full(np.shape(x1), self.z[1] + self.b)

    @property
    def degenerate(self) -> bool:
        return self.a <= 0 or self.b <= 0

    def __repr__(self):
        return f"RRegion(z={self.z}, a={self.a:g}, b={self.b:g})"


class PMinusRegion(_PrimitiveRegion):
    """Region to the lower right of an increasing curve."""

    kind = "Pminus"

    def __init__(self, beta: PlanarCurve):
        if beta.kind != "P":
            raise InvalidCurveError("P regions need a curve with both coordinates increasing")
        self.beta = beta

    def bbox(self):
        b0, b1 = self.beta.start, self.beta.end
        return (float(b0[0]), float(b1[0]), float(b0[1]), float(b1[1]))

    def left(self, x2):
        return self.beta.x1_at_x2(x2)

    def right(self, x2):
        return np.full(np.shape(x2), self.bbox()[1])

    def bottom(self, x1):
        return np.full(np.shape(x1), self.bbox()[2])

    def top(self, x1):
        return self.beta.x2_at_x1(x1)

    def __repr__(self):
        return f"PMinusRegion(start={self.beta.start.tolist()}, end={self.beta.end.tolist()})"


class PPlusRegion(_PrimitiveRegion):
    """Region to the upper left of an increasing curve."""

    kind = "Pplus"

    def __init__(self, beta: PlanarCurve):
        if beta.kind != "P":
            raise InvalidCurveError("P regions need a curve with both coordinates increasing")
        self.beta = beta

    def bbox(self):
        b0, b1 = self.beta.start, self.beta.end
        return (float(b0[0]), float(b1[0]), float(b0[1]), float(b1[1]))

    def left(self, x2):
        return np.full(np.shape(x2), self.bbox()[0])

    def right(self, x2):
        return self.beta.x1_at_x2(x2)

    def bottom(self, x1):
        return self.beta.x2_at_x1(x1)

    def top(self, x1):
        return np.full(np.shape(x1), self.bbox()[3])

    def __repr__(self):
        return f"PPlusRegion(start={self.beta.start.tolist()}, end={self.beta.end.tolist()})"


class CompositeRegion(PlanarRegion):
    """Ordered union of primitive pieces; ``pieces`` is a valid solve order."""

    def __init__(self, kind: str, pieces: Sequence[PlanarRegion], params: Optional[dict] = None,
                 labels: Optional[Sequence[str]] = None):
        self.kind = kind
        flat: list[PlanarRegion] = []
        flat_labels: list[str] = []
        for k, p in enumerate(pieces):
            lab = labels[k] if labels is not None else p.kind
            if isinstance(p, CompositeRegion):
                flat.extend(p.pieces)
                flat_labels.extend(f"{lab}/{sub}" for sub in p.labels)
            else:
                if isinstance(p, RRegion) and p.degenerate:
                    continue
                flat.append(p)
                flat_labels.append(lab)
        self.pieces = flat
        self.labels = flat_labels
        self.params = params or {}

    def primitives(self):
        return list(self.pieces)

    def bbox(self):
        boxes = np.array([p.bbox() for p in self.pieces])
        return (float(boxes[:, 0].min()), float(boxes[:, 1].max()),
                float(boxes[:, 2].min()), float(boxes[:, 3].max()))

    def contains(self, x, closed: bool = False, tol: float = 0.0) -> np.ndarray:
        x = _as_pts(x)
        if closed:
            out = np.zeros(x.shape[:-1], dtype=bool)
            for p in self.pieces:
                out |= p.contains(x, closed=True, tol=tol)
            return out
        out = np.zeros(x.shape[:-1], dtype=bool)
        for p in self.pieces:
            out |= p.contains(x)
        # points on shared edges: inside the closure of two pieces and interior to the union
        x0, x1, y0, y1 = self.bbox()
        delta = 1e-9 * max(x1 - x0, y1 - y0, 1.0)
        n_closures = sum(p.contains(x, closed=True, tol=1e-12).astype(int) for p in self.pieces)
        cand = (~out) & (n_closures >= 2)
        if np.any(cand):
            ok = cand.copy()
            for dx in (-delta, 0.0, delta):
                for dy in (-delta, 0.0, delta):
                    if dx == 0.0 and dy == 0.0:
                        continue
                    shifted = x + np.array([dx, dy])
                    inside = np.zeros(x.shape[:-1], dtype=bool)
                    for p in self.pieces:
                        inside |= p.contains(shifted, closed=True, tol=0.0)
                    ok &= inside
            out |= ok
        return out

    def __repr__(self):
        inner = ", ".join(f"{lab}:{p!r}" for lab, p in zip(self.labels, self.pieces))
        return f"CompositeRegion({self.kind}: {inner})"


# ---------------------------------------------------------------------------
# construction


def _close(p, q, scale: float) -> bool:
    return bool(np.allclose(p, q, atol=1e-9 * max(scale, 1.0)))


def make_region(kind: str, **params) -> PlanarRegion:
    """Build and validate a region of the given kind.

    ``E``: ``gamma``.  ``R``: ``z, a, b``.  ``Pminus`` / ``Pplus``: ``beta``.
    ``XiMinus``: ``beta, gamma`` with a common start and ``beta`` ending left of
    ``gamma``.  ``XiPlus``: ``beta`` starting where ``gamma`` ends and ending
    below ``gamma``'s start.  ``Phi``: ``beta, gamma, beta_hat``.
    ``Union``: ``pieces`` (and optional ``labels``) in solve order.
    """
    if kind == "E":
        return ERegion(params["gamma"])
    if kind == "R":
        return RRegion(params["z"], params["a"], params["b"])
    if kind == "Pminus":
        return PMinusRegion(params["beta"])
    if kind == "Pplus":
        return PPlusRegion(params["beta"])
    if kind == "XiMinus":
        beta, gamma = params["beta"], params["gamma"]
        E, P = ERegion(gamma), PMinusRegion(beta)
        scale = max(E.extent(), P.extent())
        if not _close(beta.start, gamma.start, scale):
            raise IncompatibleCurvesError("beta and gamma must start at the same point")
        b1, g1 = beta.end, gamma.end
        if b1[0] > g1[0] + 1e-12 * scale:
            raise IncompatibleCurvesError("beta must end at or left of gamma's end")
        z = (float(b1[0]), float(beta.start[1]))
        a = float(g1[0] - b1[0])
        b = float(b1[1] - beta.start[1])
        R = RRegion(z, max(a, 0.0), max(b, 0.0))
        return CompositeRegion("XiMinus", [E, P, R], {"z": z, "a": a, "b": b}, ["E", "Pminus", "R"])
    if kind == "XiPlus":
        beta, gamma = params["beta"], params["gamma"]
        E, P = ERegion(gamma), PPlusRegion(beta)
        scale = max(E.extent(), P.extent())
        if not _close(gamma.end, beta.start, scale):
            raise IncompatibleCurvesError("beta must start where gamma ends")
        if beta.end[1] > gamma.start[1] + 1e-12 * scale:
            raise IncompatibleCurvesError("beta must end at or below gamma's start")
        z = (float(gamma.end[0]), float(beta.end[1]))
        a = float(beta.end[0] - gamma.end[0])
        b = float(gamma.start[1] - beta.end[1])
        R = RRegion(z, max(a, 0.0), max(b, 0.0))
        return CompositeRegion("XiPlus", [E, P, R], {"z": z, "a": a, "b": b}, ["E", "Pplus", "R"])
    if kind == "Phi":
        beta, gamma, beta_hat = params["beta"], params["gamma"], params["beta_hat"]
        xi = make_region("XiMinus", beta=beta, gamma=gamma)
        Ph = PPlusRegion(beta_hat)
        scale = xi.extent()
        if not _close(gamma.end, beta_hat.start, scale):
            raise IncompatibleCurvesError("beta_hat must start where gamma ends")
        if beta_hat.end[1] > gamma.start[1] + 1e-12 * scale:
            raise IncompatibleCurvesError("beta_hat must end at or below gamma's start")
        z = (float(gamma.end[0]), float(beta_hat.end[1]))
        a = float(beta_hat.end[0] - gamma.end[0])
        b = float(beta.end[1] - beta_hat.end[1])
        if b < -1e-12 * scale:
            raise IncompatibleCurvesError("beta must end above beta_hat")
        R = RRegion(z, max(a, 0.0), max(b, 0.0))
        return CompositeRegion("Phi", [xi, Ph, R], {"z": z, "a": a, "b": b, "xi": xi.params},
                               ["XiMinus", "Pplus", "R"])
    if kind == "Union":
        return CompositeRegion("Union", params["pieces"], {}, params.get("labels"))
    raise RegionError(f"unknown region kind {kind!r}")


def membership(region: PlanarRegion, x) -> np.ndarray:
    return region.contains(x)


# ---------------------------------------------------------------------------
# subdivision


def _max_dist(p, q) -> float:
    return float(np.max(np.abs(np.asarray(p) - np.asarray(q))))


def subdivide_E(region: ERegion, eps: float) -> CompositeRegion:
    """Split an E region into smaller E pieces along its curve plus filler rectangles.

    Split points ``tau_i`` satisfy ``|gamma(tau_{i+1}) - gamma(tau_i)|_inf = eps/2``
    (the last piece may be shorter).  Pieces come back in a valid solve order:
    first the E pieces, then the rectangles by increasing distance from the
    curve.  Rectangle ``(i, j)`` with ``i < j`` covers columns of piece ``j`` and
    rows of piece ``i``.
    """
    if eps <= 0:
        raise RegionError("eps must be positive")
    g = region.gamma
    half = 0.5 * eps
    taus = [g.t_start]
    while _max_dist(g(taus[-1]), g.end) > half * (1 + 1e-9):
        t0 = taus[-1]
        f = lambda t: _max_dist(g(t), g(t0)) - half  # noqa: E731
        taus.append(brentq(f, t0, g.t_end, xtol=1e-14, rtol=1e-14))
    taus.append(g.t_end)
    m = len(taus) - 1
    if m == 1:
        return CompositeRegion("Union", [region], {"taus": taus}, ["E0"])
    pts = np.array([g(t) for t in taus])
    pieces: list[PlanarRegion] = []
    labels: list[str] = []
    for i in range(m):
        pieces.append(ERegion(g.restrict(taus[i], taus[i + 1])))
        labels.append(f"E{i}")
    for d in range(1, m):
        for i in range(m - d):
            j = i + d
            z = (pts[j, 0], pts[i + 1, 1])
            a = pts[j + 1, 0] - pts[j, 0]
            b = pts[i, 1] - pts[i + 1, 1]
            pieces.append(RRegion(z, a, b))
            labels.append(f"R{i}{j}")
    return CompositeRegion("Union", pieces, {"taus": taus}, labels)


def split_piece(piece: PlanarRegion) -> CompositeRegion:
    """Halve a primitive piece into smaller primitives listed in solve order."""
    if isinstance(piece, ERegion):
        return subdivide_E(piece, piece.extent())
    if isinstance(piece, RRegion):
        x0, y0 = piece.z
        a2, b2 = 0.5 * piece.a, 0.5 * piece.b
        parts = [RRegion((x0, y0), a2, b2), RRegion((x0 + a2, y0), a2, b2),
                 RRegion((x0, y0 + b2), a2, b2), RRegion((x0 + a2, y0 + b2), a2, b2)]
        return CompositeRegion("Union", parts, {}, ["R00", "R10", "R01", "R11"])
    if isinstance(piece, (PMinusRegion, PPlusRegion)):
        bt = piece.beta
        tm = 0.5 * (bt.t_start + bt.t_end)
        lo, hi = bt.restrict(bt.t_start, tm), bt.restrict(tm, bt.t_end)
        pm = bt(tm)
        if isinstance(piece, PMinusRegion):
            mid = RRegion((pm[0], bt.start[1]), bt.end[0] - pm[0], pm[1] - bt.start[1])
            return CompositeRegion("Union", [PMinusRegion(lo), mid, PMinusRegion(hi)], {},
                                   ["Plo", "R", "Phi"])
        mid = RRegion((bt.start[0], pm[1]), pm[0] - bt.start[0], bt.end[1] - pm[1])
        return CompositeRegion("Union", [PPlusRegion(lo), mid, PPlusRegion(hi)], {},
                               ["Plo", "R", "Phi"])
    raise RegionError(f"cannot split region of kind {piece.kind}")


# ---------------------------------------------------------------------------
# grids


@dataclass
class RegionGrid:
    """Uniform node grid covering a region; ``mask`` marks nodes in its closure."""

    region: PlanarRegion
    x1: np.ndarray
    x2: np.ndarray
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.x2 = np.asarray(self.x2, dtype=float)
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        pts = np.stack([X1, X2], axis=-1)
        self.mask = self.region.contains(pts, closed=True, tol=self.node_tol)

    @classmethod
    def covering(cls, region: PlanarRegion, n: int = 129, n2: Optional[int] = None) -> "RegionGrid":
        x0, x1, y0, y1 = region.bbox()
        return cls(region, np.linspace(x0, x1, n), np.linspace(y0, y1, n2 or n))

    @property
    def steps(self) -> tuple[float, float]:
        return float(self.x1[1] - self.x1[0]), float(self.x2[1] - self.x2[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x1.size, self.x2.size)

    @property
    def node_tol(self) -> float:
        h1 = self.x1[1] - self.x1[0] if self.x1.size > 1 else 1.0
        h2 = self.x2[1] - self.x2[0] if self.x2.size > 1 else 1.0
        return 1e-9 * min(h1, h2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def interior_mask(self) -> np.ndarray:
        X1, X2 = self.mesh()
        return self.region.contains(np.stack([X1, X2], axis=-1))

    def cell_area(self) -> float:
        h1, h2 = self.steps
        return h1 * h2


# ---------------------------------------------------------------------------
# serialisation


def region_to_json(region: PlanarRegion) -> dict:
    if isinstance(region, ERegion):
        return {"kind": "E", "gamma": region.gamma.to_json()}
    if isinstance(region, RRegion):
        return {"kind": "R", "z": list(region.z), "a": region.a, "b": region.b}
    if isinstance(region, PMinusRegion):
        return {"kind": "Pminus", "beta": region.beta.to_json()}
    if isinstance(region, PPlusRegion):
        return {"kind": "Pplus", "beta": region.beta.to_json()}
    if isinstance(region, CompositeRegion):
        return {"kind": region.kind, "labels": list(region.labels),
                "pieces": [region_to_json(p) for p in region.pieces]}
    raise RegionError(f"cannot serialise {region!r}")


def _curve_from_spec(spec) -> PlanarCurve:
    if isinstance(spec, dict) and "points" in spec:
        return PlanarCurve.from_json(spec)
    if isinstance(spec, dict) and "segment" in spec:
        p0, p1 = spec["segment"]
        return PlanarCurve.segment(p0, p1, t_end=spec.get("t_end", 1.0))
    raise RegionError(f"unrecognised curve description {spec!r}")


def region_from_json(d: dict | str) -> PlanarRegion:
    """Inverse of :func:`region_to_json`; curves may also be given as ``{"segment": [p0, p1]}``."""
    if isinstance(d, str):
        d = json.loads(d)
    kind = d["kind"]
    if kind == "E":
        return ERegion(_curve_from_spec(d["gamma"]))
    if kind == "R":
        return RRegion(d["z"], d["a"], d["b"])
    if kind in ("Pminus", "Pplus"):
        return make_region(kind, beta=_curve_from_spec(d["beta"]))
    if "pieces" in d:
        return CompositeRegion(kind, [region_from_json(p) for p in d["pieces"]], {}, d.get("labels"))
    curves = {k: _curve_from_spec(d[k]) for k in ("beta", "gamma", "beta_hat") if k in d}
    return make_region(kind, **curves)
