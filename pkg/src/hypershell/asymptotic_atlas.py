"""Discrete asymptotic coordinate charts.

A chart is anchored on a noncharacteristic curve ``gamma`` in the parameter
plane of a hyperbolic surface and normalised so that ``gamma(t)`` has chart
coordinates ``(t, -t)``.  Through every anchor point run two asymptotic
curves: along the family-2 curve through ``gamma(t)`` the first coordinate is
``t``, along the family-1 curve the second coordinate is ``-t``.  Node
``(x1, x2)`` is the intersection of the family-2 curve from ``gamma(x1)`` with
the family-1 curve from ``gamma(-x2)``.

Both families are integrated in arclength with fixed-step RK4, vectorised
over curves, and intersected by Newton iteration on cubic Hermite dense
output.  Coordinate tangents are the unit asymptotic directions scaled by the
derivative of the arclength parameter along the grid, which keeps
``Pi(d_xi, d_xi) = 0`` at round-off level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RectBivariateSpline

from .planar_regions import PlanarCurve
from .surface_geometry import (
    CharacteristicVectorError,
    CurveOnSurface,
    NotHyperbolicError,
    SurfaceChart,
    SurfaceError,
    asymptotic_directions,
    gauss_curvature,
    inverse_metric,
    metric,
    normal,
    orientation_sign,
    rotation_matrix,
    second_form,
)

__all__ = [
    "AtlasError",
    "ChartExtentError",
    "DiscontinuousFieldError",
    "NotTransversalError",
    "AsymptoticChart",
    "build_chart",
    "TransversalCurve",
    "transversal_normal_form",
    "pullback_tensor",
    "rho_Q_shape",
    "branch_formula",
    "fd_derivative",
]

ODE_STEPS = 256
NEWTON_TOL = 1e-13
NEWTON_MAXIT = 40


class AtlasError(SurfaceError):
    pass


class ChartExtentError(AtlasError):
    """The chart folds or leaves the hyperbolic part of the surface."""


class DiscontinuousFieldError(AtlasError):
    pass


class NotTransversalError(AtlasError):
    pass


# ---------------------------------------------------------------------------
# finite differences


_C5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_L5 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_L5b = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_derivative(F: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order first derivative along ``axis``; one-sided five-point stencils near the ends."""
    F = np.moveaxis(np.asarray(F, dtype=float), axis, 0)
    n = F.shape[0]
    if n < 5:
        raise AtlasError("need at least 5 nodes for fourth-order differences")
    D = np.empty_like(F)
    D[2:-2] = (_C5[0] * F[:-4] + _C5[1] * F[1:-3] + _C5[3] * F[3:-1] + _C5[4] * F[4:])
    D[0] = np.tensordot(_L5, F[0:5], axes=(0, 0))
    D[1] = np.tensordot(_L5b, F[0:5], axes=(0, 0))
    D[-1] = -np.tensordot(_L5, F[-1:-6:-1], axes=(0, 0))
    D[-2] = -np.tensordot(_L5b, F[-1:-6:-1], axes=(0, 0))
    return np.moveaxis(D / h, 0, axis)


# ---------------------------------------------------------------------------
# direction fields


def _ginner(G, a, b):
    return np.einsum("...a,...ab,...b->...", a, G, b)


def _asym_dirs_masked(surface: SurfaceChart, u: np.ndarray):
    """Asymptotic pair at each point; NaN where the point is outside the domain or not hyperbolic."""
    u = np.asarray(u, dtype=float)
    plus = np.full(u.shape, np.nan)
    minus = np.full(u.shape, np.nan)
    (a, b), (c, d) = surface.domain
    ok = np.all(np.isfinite(u), axis=-1)
    ok &= (u[..., 0] >= a) & (u[..., 0] <= b) & (u[..., 1] >= c) & (u[..., 1] <= d)
    if np.any(ok):
        uu = u[ok]
        kap = gauss_curvature(surface, uu)
        good = kap < 0
        idx = np.flatnonzero(ok)
        idx = idx[good]
        if idx.size:
            p, m = asymptotic_directions(surface, uu[good])
            plus.reshape(-1, 2)[idx] = p
            minus.reshape(-1, 2)[idx] = m
    return plus, minus


def _aligned(surface: SurfaceChart, u: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """The asymptotic unit direction at ``u`` closest to ``prev``, signed to agree with it."""
    plus, minus = _asym_dirs_masked(surface, u)
    (a, b), (c, d) = surface.domain
    centre = np.array([0.5 * (a + b), 0.5 * (c + d)])
    G = metric(surface, np.where(np.all(np.isfinite(plus), axis=-1)[..., None], u, centre))
    pn = prev / np.sqrt(np.abs(_ginner(G, prev, prev)))[..., None]
    cp = _ginner(G, plus, pn)
    cm = _ginner(G, minus, pn)
    use_p = np.abs(cp) >= np.abs(cm)
    best = np.where(use_p, np.abs(cp), np.abs(cm))
    if np.any(best[np.isfinite(best)] < 0.5):
        raise DiscontinuousFieldError("asymptotic direction turned too far within one step")
    d = np.where(use_p[..., None], plus * np.sign(cp)[..., None], minus * np.sign(cm)[..., None])
    return d


def _rk4_family(surface: SurfaceChart, u0: np.ndarray, d0: np.ndarray, hs: float, steps: int):
    """Integrate ``u' = A(u)`` from ``u0`` for ``steps`` steps of size ``hs`` (negative steps go backwards)."""
    m = u0.shape[0]
    U = np.full((steps + 1, m, 2), np.nan)
    D = np.full((steps + 1, m, 2), np.nan)
    U[0], D[0] = u0, d0
    u, d = u0.copy(), d0.copy()
    for k in range(steps):
        alive = np.all(np.isfinite(u), axis=-1) & np.all(np.isfinite(d), axis=-1)
        if not alive.any():
            break
        with np.errstate(invalid="ignore"):
            k1 = _aligned(surface, u, d)
            k2 = _aligned(surface, u + 0.5 * hs * k1, k1)
            k3 = _aligned(surface, u + 0.5 * hs * k2, k2)
            k4 = _aligned(surface, u + hs * k3, k3)
            un = u + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            dn = _aligned(surface, un, k4)
        bad = ~(np.all(np.isfinite(un), axis=-1) & np.all(np.isfinite(dn), axis=-1))
        un[bad] = np.nan
        dn[bad] = np.nan
        U[k + 1], D[k + 1] = un, dn
        u, d = un, dn
    return U, D


@dataclass
class _CurveBundle:
    """Arclength-parametrised curves sampled at ``s = s0 + k hs`` with Hermite dense output."""

    s0: float
    hs: float
    U: np.ndarray   # (curves, samples, 2)
    D: np.ndarray

    @property
    def s_range(self) -> tuple[float, float]:
        return self.s0, self.s0 + self.hs * (self.U.shape[1] - 1)

    def eval(self, k: np.ndarray, s: np.ndarray):
        n = self.U.shape[1]
        x = (s - self.s0) / self.hs
        i = np.clip(np.floor(x).astype(int), 0, n - 2)
        t = x - i
        p0, p1 = self.U[k, i], self.U[k, i + 1]
        m0, m1 = self.D[k, i] * self.hs, self.D[k, i + 1] * self.hs
        t = t[:, None]
        t2, t3 = t * t, t * t * t
        pos = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1
        der = ((6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1
               + (3 * t2 - 2 * t) * m1) / self.hs
        out = (x < -1e-9) | (x > n - 1 + 1e-9)
        pos[out] = np.nan
        der[out] = np.nan
        return pos, der


def _bundle(surface, u0, d0, smax, steps) -> _CurveBundle:
    hs = smax / steps
    Uf, Df = _rk4_family(surface, u0, d0, hs, steps)
    Ub, Db = _rk4_family(surface, u0, d0, -hs, steps)
    U = np.concatenate([Ub[:0:-1], Uf], axis=0).transpose(1, 0, 2)
    D = np.concatenate([Db[:0:-1], Df], axis=0).transpose(1, 0, 2)
    return _CurveBundle(-smax, hs, U, D)


# ---------------------------------------------------------------------------
# chart


@dataclass
class AsymptoticChart:
    """Asymptotic chart sampled on a tensor grid ``x1 x x2`` (arrays indexed ``[i, j]``)."""

    surface: SurfaceChart
    anchor: CurveOnSurface
    x1: np.ndarray
    x2: np.ndarray
    u: np.ndarray            # (n1, n2, 2) surface parameters of the nodes
    J: np.ndarray            # (n1, n2, 2, 2) columns d_x1, d_x2 in surface coordinates
    g: np.ndarray            # (n1, n2, 2, 2)
    Gamma: np.ndarray        # (n1, n2, 2, 2, 2), Gamma[..., k, i, j]
    omega: np.ndarray        # (n1, n2)
    normal: np.ndarray       # (n1, n2, 3)
    tangents: np.ndarray     # (n1, n2, 3, 2) ambient d_x1, d_x2
    kappa: np.ndarray
    pi_diag: np.ndarray      # (n1, n2, 2) residual Pi(d_xi, d_xi)
    swapped: bool = False
    meta: dict = field(default_factory=dict)

    # geometry ----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.x1.size, self.x2.size

    @property
    def steps(self) -> tuple[float, float]:
        return float(self.x1[1] - self.x1[0]), float(self.x2[1] - self.x2[0])

    def mesh(self):
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    @property
    def det_g(self) -> np.ndarray:
        return self.g[..., 0, 0] * self.g[..., 1, 1] - self.g[..., 0, 1] ** 2

    @property
    def g_inv(self) -> np.ndarray:
        return inverse_metric(self.g)

    def interior(self, margin: int = 1) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[margin:self.shape[0] - margin, margin:self.shape[1] - margin] = True
        return m

    def pi_residual(self) -> np.ndarray:
        """``max_i |Pi(d_xi, d_xi)| / |omega|`` per node."""
        return np.max(np.abs(self.pi_diag), axis=-1) / np.abs(self.omega)

    def gauss_identity_residual(self) -> np.ndarray:
        """``|omega^2 + kappa det g| / omega^2`` per node."""
        w2 = self.omega ** 2
        return np.abs(w2 + self.kappa * self.det_g) / w2

    def metric_compatibility_residual(self) -> np.ndarray:
        """``d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il`` with the same difference operator."""
        h1, h2 = self.steps
        dg = np.stack([fd_derivative(self.g, h1, 0), fd_derivative(self.g, h2, 1)], axis=-3)
        Gm = self.Gamma
        t1 = np.einsum("...lki,...lj->...kij", Gm, self.g)
        t2 = np.einsum("...lkj,...il->...kij", Gm, self.g)
        return np.max(np.abs(dg - t1 - t2), axis=(-3, -2, -1))

    def jacobian_det(self) -> np.ndarray:
        return self.J[..., 0, 0] * self.J[..., 1, 1] - self.J[..., 0, 1] * self.J[..., 1, 0]

    # maps ---------------------------------------------------------------
    def _splines(self):
        if "_spl" not in self.meta:
            self.meta["_spl"] = (RectBivariateSpline(self.x1, self.x2, self.u[..., 0]),
                                 RectBivariateSpline(self.x1, self.x2, self.u[..., 1]))
        return self.meta["_spl"]

    def psi_inv(self, x) -> np.ndarray:
        """Surface parameters of chart points ``x`` (bicubic spline through the nodes)."""
        x = np.asarray(x, dtype=float)
        s1, s2 = self._splines()
        flat = x.reshape(-1, 2)
        out = np.stack([s1.ev(flat[:, 0], flat[:, 1]), s2.ev(flat[:, 0], flat[:, 1])], axis=-1)
        return out.reshape(x.shape)

    def psi_inv_jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s1, s2 = self._splines()
        f = x.reshape(-1, 2)
        J = np.empty((f.shape[0], 2, 2))
        for r, s in enumerate((s1, s2)):
            J[:, r, 0] = s.ev(f[:, 0], f[:, 1], dx=1)
            J[:, r, 1] = s.ev(f[:, 0], f[:, 1], dy=1)
        return J.reshape(x.shape[:-1] + (2, 2))

    def psi(self, u, tol: float = 1e-12, maxit: int = 30) -> np.ndarray:
        """Chart coordinates of surface points ``u`` (Newton on the spline inverse)."""
        from scipy.spatial import cKDTree

        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, 2)
        if "_tree" not in self.meta:
            self.meta["_tree"] = cKDTree(self.u.reshape(-1, 2))
        X1, X2 = self.mesh()
        xs = np.stack([X1.ravel(), X2.ravel()], axis=-1)
        x = xs[self.meta["_tree"].query(flat)[1]].copy()
        for _ in range(maxit):
            r = self.psi_inv(x) - flat
            dx = np.linalg.solve(self.psi_inv_jacobian(x), r[..., None])[..., 0]
            x -= dx
            if np.max(np.abs(dx), initial=0.0) < tol:
                break
        return x.reshape(u.shape)

    def field(self, values: np.ndarray):
        """Wrap node values as a linearly interpolated grid function."""
        from .characteristic_solver import GridFunction
        return GridFunction(self.x1, self.x2, values)

    def swap(self) -> "AsymptoticChart":
        """The reflected chart ``(x1, x2) -> (-x2, -x1)``; the anchor keeps its normal form."""
        def t(a):
            return np.swapaxes(a[::-1, ::-1], 0, 1)

        P = np.array([[0.0, -1.0], [-1.0, 0.0]])   # d_hat1 = -d_x2, d_hat2 = -d_x1
        J = t(self.J) @ P
        g = np.einsum("ai,...ab,bj->...ij", P, t(self.g), P)
        Gm = np.einsum("ka,...abc,bi,cj->...kij", P, t(self.Gamma), P, P)
        tang = t(self.tangents) @ P
        return AsymptoticChart(self.surface, self.anchor, -self.x2[::-1], -self.x1[::-1], t(self.u), J, g,
                               Gm, t(self.omega), t(self.normal), tang, t(self.kappa),
                               t(self.pi_diag)[..., ::-1], not self.swapped,
                               {k: v for k, v in self.meta.items() if not k.startswith("_")})

    # export --------------------------------------------------------------
    def header(self) -> dict:
        ts = np.linspace(*self.anchor.t_range, 33)
        return {
            "surface": self.surface.name,
            "anchor_t": ts.tolist(),
            "anchor_u": self.anchor(ts).tolist(),
            "x1": [float(self.x1[0]), float(self.x1[-1]), int(self.x1.size)],
            "x2": [float(self.x2[0]), float(self.x2[-1]), int(self.x2.size)],
            "steps": list(self.steps),
            "swapped": self.swapped,
            "fields": ["u1", "u2", "g11", "g12", "g22", "G111", "G112", "G122", "G211", "G212", "G222",
                       "omega"],
            "layout": "per field: n1*n2 little-endian float64, index i (x1) slowest",
        }

    def dump(self, stem: str) -> tuple[str, str]:
        """Write ``stem.json`` (header) and ``stem.bin`` (stacked node fields)."""
        Gm = self.Gamma
        fields = [self.u[..., 0], self.u[..., 1], self.g[..., 0, 0], self.g[..., 0, 1], self.g[..., 1, 1],
                  Gm[..., 0, 0, 0], Gm[..., 0, 0, 1], Gm[..., 0, 1, 1],
                  Gm[..., 1, 0, 0], Gm[..., 1, 0, 1], Gm[..., 1, 1, 1], self.omega]
        with open(stem + ".bin", "wb") as fh:
            for f in fields:
                fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())
        with open(stem + ".json", "w") as fh:
            json.dump(self.header(), fh, indent=1)
        return stem + ".json", stem + ".bin"


def _anchor_frames(surface, anchor: CurveOnSurface, ts: np.ndarray):
    """Family directions ``A1, A2`` along the anchor with ``gamma' = a A1 - b A2``, ``a, b > 0``."""
    p = anchor(ts)
    dg = anchor.tangent(ts)
    plus, minus = _asym_dirs_masked(surface, p)
    if not np.all(np.isfinite(plus)):
        raise NotHyperbolicError("anchor leaves the hyperbolic part of the surface")
    # keep the labelling continuous along the anchor
    mid = len(ts) // 2
    A = np.empty_like(plus)
    B = np.empty_like(minus)
    A[mid], B[mid] = plus[mid], minus[mid]
    G = metric(surface, p)
    for rng in (range(mid + 1, len(ts)), range(mid - 1, -1, -1)):
        prevA, prevB = A[mid], B[mid]
        for k in rng:
            if abs(_ginner(G[k], plus[k], prevA)) >= abs(_ginner(G[k], minus[k], prevA)):
                A[k], B[k] = plus[k], minus[k]
            else:
                A[k], B[k] = minus[k], plus[k]
            A[k] *= np.sign(_ginner(G[k], A[k], prevA))
            B[k] *= np.sign(_ginner(G[k], B[k], prevB))
            prevA, prevB = A[k], B[k]
    coef = np.linalg.solve(np.stack([A, B], axis=-1), dg[..., None])[..., 0]
    scale = np.sqrt(_ginner(G, dg, dg))
    if np.any(np.abs(coef) <= 1e-10 * scale[:, None]):
        raise CharacteristicVectorError("anchor is tangent to an asymptotic direction")
    sa, sb = np.sign(coef[:, 0]), np.sign(coef[:, 1])
    if np.any(sa != sa[0]) or np.any(sb != sb[0]):
        raise DiscontinuousFieldError("anchor decomposition changes sign")
    return p, A * sa[:, None], -B * sb[:, None]


def _christoffels_from_metric(g, h1, h2):
    dg = np.stack([fd_derivative(g, h1, 0), fd_derivative(g, h2, 1)], axis=-3)  # [..., l, i, j] = d_l g_ij
    gi = inverse_metric(g)
    # Gamma_lij (first kind) = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    first = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    return np.einsum("...kl,...lij->...kij", gi, first)


def build_chart(surface: SurfaceChart, anchor: CurveOnSurface, n: int = 65,
                ode_steps: int = ODE_STEPS, arclength: Optional[float] = None,
                x1_range: Optional[tuple] = None, x2_range: Optional[tuple] = None) -> AsymptoticChart:
    """Asymptotic chart with ``gamma(t) -> (t, -t)`` on an ``n x n`` grid.

    By default the grid covers ``[t0, t1] x [-t1, -t0]`` where ``[t0, t1]`` is
    the anchor's parameter range, so the anchor is the anti-diagonal of the
    grid.  Sub-ranges must stay inside that square and keep the same step.
    """
    if n < 5:
        raise AtlasError("chart needs at least 5 nodes per direction")
    t0, t1 = anchor.t_range
    ts = np.linspace(t0, t1, n)
    p, A1, A2 = _anchor_frames(surface, anchor, ts)

    # arclength budget: a few times the metric length of the anchor
    dense = np.linspace(t0, t1, 513)
    Gd = metric(surface, anchor(dense))
    dd = anchor.tangent(dense)
    length = float(trapezoid(np.sqrt(_ginner(Gd, dd, dd)), dense))
    smax = arclength if arclength is not None else 2.0 * length
    x1 = ts.copy()
    x2 = -ts[::-1]
    fam1 = fam2 = None
    s1 = s2 = None
    for _attempt in range(3):
        fam2 = _bundle(surface, p, A2, smax, ode_steps)
        fam1 = _bundle(surface, p, A1, smax, ode_steps)
        try:
            s1, s2 = _intersect_all(fam1, fam2, n)
            break
        except _OutOfRange:
            smax *= 2.0
            ode_steps *= 2
    else:
        raise ChartExtentError("asymptotic curves did not reach all nodes")
    if s1 is None or not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise ChartExtentError("chart leaves the surface domain or its hyperbolic part")

    i_idx = np.repeat(np.arange(n), n)
    u, d2 = fam2.eval(i_idx, s2.ravel())
    k1 = np.tile(np.arange(n)[::-1], n)
    _, d1 = fam1.eval(k1, s1.ravel())
    u = u.reshape(n, n, 2)
    h = float(ts[1] - ts[0])
    ds1 = fd_derivative(s1, h, 0)
    ds2 = fd_derivative(s2, h, 1)
    if np.any(ds1 <= 0) or np.any(ds2 <= 0):
        raise ChartExtentError("chart folds: arclength is not monotone along grid lines")
    a1 = _aligned(surface, u, d1.reshape(n, n, 2))
    a2 = _aligned(surface, u, d2.reshape(n, n, 2))
    if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
        raise ChartExtentError("chart leaves the hyperbolic part of the surface")
    J = np.stack([ds1[..., None] * a1, ds2[..., None] * a2], axis=-1)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if not (np.all(detJ > 0) or np.all(detJ < 0)):
        raise ChartExtentError("chart folds: Jacobian changes sign")

    Gu = metric(surface, u)
    Pu = second_form(surface, u)
    g = np.einsum("...ai,...ab,...bj->...ij", J, Gu, J)
    Px = np.einsum("...ai,...ab,...bj->...ij", J, Pu, J)
    Gamma = _christoffels_from_metric(g, h, h)
    tang = surface.tangents(u) @ J
    chart = AsymptoticChart(surface, anchor, x1, x2, u, J, g, Gamma, Px[..., 0, 1], normal(surface, u),
                            tang, gauss_curvature(surface, u),
                            np.stack([Px[..., 0, 0], Px[..., 1, 1]], axis=-1), False,
                            {"ode_steps": ode_steps, "arclength": smax, "s1": s1, "s2": s2})
    if x1_range is not None or x2_range is not None:
        chart = _restrict(chart, x1_range, x2_range)
    return chart


def _restrict(chart: AsymptoticChart, r1, r2) -> AsymptoticChart:
    tol = 1e-9 * chart.steps[0]
    r1 = r1 or (chart.x1[0], chart.x1[-1])
    r2 = r2 or (chart.x2[0], chart.x2[-1])
    I = np.nonzero((chart.x1 >= r1[0] - tol) & (chart.x1 <= r1[1] + tol))[0]
    K = np.nonzero((chart.x2 >= r2[0] - tol) & (chart.x2 <= r2[1] + tol))[0]
    sl = (slice(I[0], I[-1] + 1), slice(K[0], K[-1] + 1))
    return AsymptoticChart(chart.surface, chart.anchor, chart.x1[sl[0]], chart.x2[sl[1]], chart.u[sl],
                           chart.J[sl], chart.g[sl], chart.Gamma[sl], chart.omega[sl], chart.normal[sl],
                           chart.tangents[sl], chart.kappa[sl], chart.pi_diag[sl], chart.swapped,
                           {k: v for k, v in chart.meta.items() if not k.startswith("_")})


class _OutOfRange(Exception):
    pass


def _intersect_all(fam1: _CurveBundle, fam2: _CurveBundle, n: int):
    """Arclength parameters ``(s1, s2)`` of every node, sweeping anti-diagonals away from the anchor."""
    s1 = np.full((n, n), np.nan)
    s2 = np.full((n, n), np.nan)
    i = np.arange(n)
    s1[i, n - 1 - i] = 0.0
    s2[i, n - 1 - i] = 0.0
    lo1, hi1 = fam1.s_range
    lo2, hi2 = fam2.s_range
    for d in list(range(1, n)) + list(range(-1, -n, -1)):
        if d > 0:
            ii = np.arange(d, n)
            jj = n - 1 + d - ii
            g2 = s2[ii, jj - 1]        # same family-2 curve, previous diagonal
            g1 = s1[ii - 1, jj]        # same family-1 curve, previous diagonal
        else:
            ii = np.arange(0, n + d)
            jj = n - 1 + d - ii
            g2 = s2[ii, jj + 1]
            g1 = s1[ii + 1, jj]
        k2 = ii
        k1 = n - 1 - jj
        a, b = g1.copy(), g2.copy()
        # secant-free Newton on C2(b) - C1(a) = 0
        for _ in range(NEWTON_MAXIT):
            p2, t2 = fam2.eval(k2, b)
            p1, t1 = fam1.eval(k1, a)
            r = p2 - p1
            M = np.stack([-t1, t2], axis=-1)
            with np.errstate(invalid="ignore"):
                step = np.linalg.solve(np.where(np.isfinite(M), M, np.eye(2)), r[..., None])[..., 0]
            step[~np.all(np.isfinite(M), axis=(-2, -1))] = np.nan
            a = a - step[:, 0]
            b = b - step[:, 1]
            if np.any((a < lo1) | (a > hi1) | (b < lo2) | (b > hi2)):
                raise _OutOfRange()
            if np.all(np.abs(step) < NEWTON_TOL * (1 + np.abs(np.stack([a, b], -1)))):
                break
            if not np.all(np.isfinite(step)):
                raise ChartExtentError("asymptotic curves leave the surface domain before meeting")
        else:
            raise ChartExtentError("node intersection did not converge (chart folds)")
        s1[ii, jj] = a
        s2[ii, jj] = b
    return s1, s2


# ---------------------------------------------------------------------------
# transversal curves


@dataclass
class TransversalCurve:
    curve: PlanarCurve
    chart: AsymptoticChart     # chart in which the normal form holds (possibly swapped)
    swapped: bool
    s: np.ndarray
    coords: np.ndarray
    derivative: np.ndarray


def transversal_normal_form(chart: AsymptoticChart, beta: CurveOnSurface, samples: int = 257) -> TransversalCurve:
    """Chart coordinates of ``beta`` with both components increasing.

    If they both decrease, the reflected chart is used instead.  Mixed signs
    (a characteristic or non-transversal crossing) raise NotTransversalError.
    """
    s = np.linspace(*beta.t_range, samples)
    x = chart.psi(beta(s))
    du = beta.tangent(s)
    Jx = chart.psi_inv_jacobian(x)
    dx = np.linalg.solve(Jx, du[..., None])[..., 0]
    if np.all(dx > 0):
        return TransversalCurve(PlanarCurve(s, x, "P"), chart, chart.swapped, s, x, dx)
    if np.all(dx < 0):
        sw = chart.swap()
        xs = np.stack([-x[:, 1], -x[:, 0]], axis=-1)
        dxs = np.stack([-dx[:, 1], -dx[:, 0]], axis=-1)
        return TransversalCurve(PlanarCurve(s, xs, "P"), sw, sw.swapped, s, xs, dxs)
    raise NotTransversalError("curve is not increasing in both asymptotic coordinates under either orientation")


def rho_Q_shape(chart: AsymptoticChart, i: int, j: int, X: np.ndarray) -> np.ndarray:
    """``rho(X) Q grad_X n`` at node ``(i, j)`` for chart components ``X``, returned in chart components."""
    u = chart.u[i, j]
    G = metric(chart.surface, u)
    P = second_form(chart.surface, u)
    J = chart.J[i, j]
    Xu = J @ X
    kappa = float(np.linalg.det(P) / np.linalg.det(G))
    pxx = float(Xu @ P @ Xu)
    rho = np.sign(pxx) / np.sqrt(-kappa)
    v = rotation_matrix(G) @ (inverse_metric(G) @ P @ Xu)
    return np.linalg.solve(J, rho * v)


def branch_formula(chart: AsymptoticChart, gamma_dir: np.ndarray, beta_dir: np.ndarray, i: int, j: int,
                   X: np.ndarray) -> np.ndarray:
    """Closed form of :func:`rho_Q_shape`: ``chi * sign(X1 X2) (X1, -X2)``.

    ``chi`` is the orientation sign of the pair (anchor direction, transversal
    direction) measured in surface coordinates.
    """
    J = chart.J[i, j]
    chi = orientation_sign(J @ gamma_dir, J @ beta_dir)
    X = np.asarray(X, dtype=float)
    return chi * np.sign(X[0] * X[1]) * np.array([X[0], -X[1]])


def pullback_tensor(chart: AsymptoticChart, T: Callable[[np.ndarray], np.ndarray]) -> tuple:
    """Components ``(T11, T12, T22)`` of a symmetric tensor field given in surface coordinates."""
    Tu = np.asarray(T(chart.u), dtype=float)
    Tx = np.einsum("...ai,...ab,...bj->...ij", chart.J, Tu, chart.J)
    return Tx[..., 0, 0], 0.5 * (Tx[..., 0, 1] + Tx[..., 1, 0]), Tx[..., 1, 1]
