"""Linear strain equation on hyperbolic surfaces in asymptotic coordinates.

For a displacement ``y = W + w n`` the strain is ``sym DW + w Pi``.  In an
asymptotic chart with covariant components ``W_i = <W, d_xi>`` the diagonal
strain components only involve ``W`` and give a characteristic system for
``(W1, W2)``; the off-diagonal component then determines ``w`` because
``Pi_12 = omega`` does not vanish.

Strain components here are always taken in the chart basis: ``U_ij =
U(d_xi, d_xj)``.  Derivatives of grid fields use second-order differences
restricted to a node mask (central inside, three-point one-sided at the
edge of the mask).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .asymptotic_atlas import AsymptoticChart, build_chart, pullback_tensor
from .characteristic_solver import (
    CharSystem,
    GridPairField,
    phi_data,
    solve_region,
    xi_minus_data,
)
from .planar_regions import (
    CompositeRegion,
    ERegion,
    PlanarCurve,
    PlanarRegion,
    RRegion,
    make_region,
)
from .surface_geometry import (
    CurveOnSurface,
    SurfaceChart,
    SurfaceError,
    boundary_operator_T,
    classify_connection,
    inverse_metric,
    metric,
)

__all__ = [
    "StrainError",
    "StencilMarginError",
    "DegenerateChartError",
    "ConversionError",
    "PastingInconsistencyError",
    "UnsupportedConnectionError",
    "masked_diff",
    "ShellDisplacementSurface",
    "StrainTensorField",
    "strain_of",
    "reduce_to_char_system",
    "convert_boundary_data",
    "solve_strain_local",
    "SmoothAmbientField",
    "rigid_motion",
    "manufactured",
    "anchor_samples",
    "phi_components",
    "covariant_on_curve",
    "PastingResult",
    "paste_charts",
    "ConnectionResult",
    "connection_point_solve",
]


class StrainError(RuntimeError):
    pass


class StencilMarginError(StrainError):
    pass


class DegenerateChartError(StrainError):
    pass


class ConversionError(StrainError, ValueError):
    pass


class PastingInconsistencyError(StrainError):
    pass


class UnsupportedConnectionError(StrainError):
    pass


# ---------------------------------------------------------------------------
# masked differences


def masked_diff(F: np.ndarray, mask: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order derivative along ``axis`` using only nodes in ``mask``; NaN where no stencil fits."""
    F = np.moveaxis(np.asarray(F, dtype=float), axis, 0)
    M = np.moveaxis(np.asarray(mask, dtype=bool), axis, 0)
    pad = [(2, 2)] + [(0, 0)] * (F.ndim - 1)
    Fp = np.pad(np.where(M, F, 0.0), pad)
    Mp = np.pad(M, pad)
    n = F.shape[0]
    f = lambda k: Fp[2 + k: 2 + k + n]  # noqa: E731
    m = lambda k: Mp[2 + k: 2 + k + n]  # noqa: E731
    D = np.full(F.shape, np.nan)
    central = M & m(-1) & m(1)
    fwd = M & ~central & m(1) & m(2)
    bwd = M & ~central & ~fwd & m(-1) & m(-2)
    D = np.where(central, (f(1) - f(-1)) / (2 * h), D)
    D = np.where(fwd, (-3 * f(0) + 4 * f(1) - f(2)) / (2 * h), D)
    D = np.where(bwd, (3 * f(0) - 4 * f(-1) + f(-2)) / (2 * h), D)
    return np.moveaxis(D, 0, axis)


# ---------------------------------------------------------------------------
# fields


def _l2(chart: AsymptoticChart, mask: np.ndarray, sq: np.ndarray) -> float:
    h1, h2 = chart.steps
    area = np.sqrt(chart.det_g)
    ok = mask & np.isfinite(sq)
    return float(np.sqrt(abs(h1 * h2) * np.sum((sq * area)[ok])))


@dataclass
class ShellDisplacementSurface:
    """Covariant tangential components and normal component of a displacement on chart nodes."""

    chart: AsymptoticChart
    W1: np.ndarray
    W2: np.ndarray
    w: np.ndarray
    mask: np.ndarray
    solution: Optional[GridPairField] = None
    region: Optional[PlanarRegion] = None

    @classmethod
    def from_ambient(cls, chart: AsymptoticChart, y: np.ndarray, mask: Optional[np.ndarray] = None):
        """Decompose ambient node vectors ``y`` into ``W_i = <y, d_xi>`` and ``w = <y, n>``."""
        W = np.einsum("...a,...ai->...i", y, chart.tangents)
        w = np.einsum("...a,...a->...", y, chart.normal)
        m = np.ones(chart.shape, dtype=bool) if mask is None else mask
        return cls(chart, W[..., 0], W[..., 1], w, m)

    @classmethod
    def zeros(cls, chart: AsymptoticChart, mask: Optional[np.ndarray] = None):
        z = np.zeros(chart.shape)
        return cls(chart, z, z.copy(), z.copy(), np.ones(chart.shape, bool) if mask is None else mask)

    def contravariant(self) -> tuple[np.ndarray, np.ndarray]:
        gi = self.chart.g_inv
        a = gi[..., 0, 0] * self.W1 + gi[..., 0, 1] * self.W2
        b = gi[..., 1, 0] * self.W1 + gi[..., 1, 1] * self.W2
        return a, b

    def tangential(self) -> np.ndarray:
        """Ambient tangential vector field ``W`` (NaN outside the mask)."""
        a, b = self.contravariant()
        v = self.chart.tangents[..., 0] * a[..., None] + self.chart.tangents[..., 1] * b[..., None]
        return np.where(self.mask[..., None], v, np.nan)

    def ambient(self) -> np.ndarray:
        return self.tangential() + self.w[..., None] * self.chart.normal

    def norm_W(self) -> float:
        a, b = self.contravariant()
        return _l2(self.chart, self.mask, a * self.W1 + b * self.W2)

    def norm_w(self) -> float:
        return _l2(self.chart, self.mask, self.w ** 2)

    def to_field(self) -> GridPairField:
        return GridPairField(self.chart.x1, self.chart.x2, np.where(self.mask, self.W1, np.nan),
                             np.where(self.mask, self.W2, np.nan), self.mask, self.region)

    def to_csv(self, path) -> None:
        X1, X2 = self.chart.mesh()
        with open(path, "w") as fh:
            fh.write("x1,x2,u1,u2,W1,W2,w\n")
            for j in range(self.chart.shape[1]):
                for i in range(self.chart.shape[0]):
                    if self.mask[i, j]:
                        vals = (X1[i, j], X2[i, j], self.chart.u[i, j, 0], self.chart.u[i, j, 1],
                                self.W1[i, j], self.W2[i, j], self.w[i, j])
                        fh.write(",".join(repr(float(v)) for v in vals) + "\n")


@dataclass
class StrainTensorField:
    """Symmetric strain in the chart basis; NaN where undefined."""

    chart: AsymptoticChart
    U11: np.ndarray
    U12: np.ndarray
    U22: np.ndarray
    mask: np.ndarray

    @classmethod
    def zeros(cls, chart: AsymptoticChart):
        z = np.zeros(chart.shape)
        return cls(chart, z, z.copy(), z.copy(), np.ones(chart.shape, bool))

    @classmethod
    def from_surface_tensor(cls, chart: AsymptoticChart, T: Callable[[np.ndarray], np.ndarray]):
        """Pull back a symmetric tensor field given in surface parameter coordinates."""
        a, b, c = pullback_tensor(chart, T)
        return cls(chart, a, b, c, np.ones(chart.shape, bool))

    def components(self) -> np.ndarray:
        return np.stack([self.U11, self.U12, self.U22], axis=-1)

    def norm(self, mask: Optional[np.ndarray] = None) -> float:
        """``L^2`` norm with the pointwise norm taken in the metric ``g``."""
        m = self.mask if mask is None else (mask & self.mask)
        gi = self.chart.g_inv
        U = np.stack([np.stack([self.U11, self.U12], -1), np.stack([self.U12, self.U22], -1)], -2)
        sq = np.einsum("...ab,...bc,...cd,...da->...", gi, U, gi, U)
        return _l2(self.chart, m, sq)

    def __sub__(self, other: "StrainTensorField") -> "StrainTensorField":
        return StrainTensorField(self.chart, self.U11 - other.U11, self.U12 - other.U12,
                                 self.U22 - other.U22, self.mask & other.mask)

    def __mul__(self, c: float) -> "StrainTensorField":
        return StrainTensorField(self.chart, c * self.U11, c * self.U12, c * self.U22, self.mask)

    __rmul__ = __mul__

    def __add__(self, other: "StrainTensorField") -> "StrainTensorField":
        return StrainTensorField(self.chart, self.U11 + other.U11, self.U12 + other.U12,
                                 self.U22 + other.U22, self.mask & other.mask)


def _sym_dw(chart: AsymptoticChart, W1, W2, mask):
    h1, h2 = chart.steps
    d1W1 = masked_diff(W1, mask, h1, 0)
    d2W1 = masked_diff(W1, mask, h2, 1)
    d1W2 = masked_diff(W2, mask, h1, 0)
    d2W2 = masked_diff(W2, mask, h2, 1)
    G = chart.Gamma
    s11 = d1W1 - G[..., 0, 0, 0] * W1 - G[..., 1, 0, 0] * W2
    s22 = d2W2 - G[..., 0, 1, 1] * W1 - G[..., 1, 1, 1] * W2
    s12 = 0.5 * (d1W2 + d2W1) - G[..., 0, 0, 1] * W1 - G[..., 1, 0, 1] * W2
    return s11, s12, s22


def strain_of(disp: ShellDisplacementSurface) -> StrainTensorField:
    """``sym DW + w Pi`` in the chart basis, with ``Pi = [[0, omega], [omega, 0]]``."""
    if disp.mask.sum() == 0:
        raise StencilMarginError("displacement has no nodes")
    s11, s12, s22 = _sym_dw(disp.chart, disp.W1, disp.W2, disp.mask)
    u12 = s12 + disp.w * disp.chart.omega
    ok = disp.mask & np.isfinite(s11) & np.isfinite(s22) & np.isfinite(u12)
    if not ok.any():
        raise StencilMarginError("no node has a complete difference stencil")
    return StrainTensorField(disp.chart, np.where(ok, s11, np.nan), np.where(ok, u12, np.nan),
                             np.where(ok, s22, np.nan), ok)


def reduce_to_char_system(chart: AsymptoticChart, U: StrainTensorField):
    """Characteristic system for ``(W1, W2)`` and the closure recovering ``w``.

    ``a11 = Gamma^1_11, a12 = Gamma^2_11, a21 = Gamma^1_22, a22 = Gamma^2_22``,
    ``p = (U11, U22)``.
    """
    if np.min(np.abs(chart.omega)) < 1e-8:
        raise DegenerateChartError("|omega| drops below 1e-8 on the chart")
    G = chart.Gamma
    f = chart.field
    system = CharSystem(a11=f(G[..., 0, 0, 0]), a12=f(G[..., 1, 0, 0]), a21=f(G[..., 0, 1, 1]),
                        a22=f(G[..., 1, 1, 1]), p1=f(np.nan_to_num(U.U11)), p2=f(np.nan_to_num(U.U22)))

    def recover_w(W1: np.ndarray, W2: np.ndarray, mask: np.ndarray) -> np.ndarray:
        _, s12, _ = _sym_dw(chart, np.nan_to_num(W1), np.nan_to_num(W2), mask)
        return np.where(mask, (U.U12 - s12) / chart.omega, np.nan)

    return system, recover_w


# ---------------------------------------------------------------------------
# boundary data


def anchor_samples(chart: AsymptoticChart):
    """Node indices ``(i, j)`` on the anchor ``x2 = -x1`` and their parameters ``t = x1``."""
    tol = 1e-9 * abs(chart.steps[0])
    ii, jj = [], []
    for i, t in enumerate(chart.x1):
        j = np.nonzero(np.abs(chart.x2 + t) <= tol)[0]
        if j.size:
            ii.append(i)
            jj.append(int(j[0]))
    if len(ii) < 4:
        raise ConversionError("chart grid does not carry enough anchor nodes")
    ii, jj = np.array(ii), np.array(jj)
    return ii, jj, chart.x1[ii]


def phi_components(chart: AsymptoticChart, V: Callable[[np.ndarray], np.ndarray]) -> Callable:
    """Chart components ``(phi1, phi2)`` along the anchor of a vector field given in surface coordinates."""
    ii, jj, t = anchor_samples(chart)
    Vu = np.asarray(V(chart.u[ii, jj]), dtype=float)
    comps = np.linalg.solve(chart.J[ii, jj], Vu[..., None])[..., 0]
    return CubicSpline(t, comps, axis=0)


def covariant_on_curve(chart: AsymptoticChart, V: Callable[[np.ndarray], np.ndarray], curve: PlanarCurve,
                       samples: int = 257) -> Callable:
    """Covariant chart components ``<V, d_xi>`` of a surface vector field along a chart-plane curve."""
    s = np.linspace(curve.t_start, curve.t_end, samples)
    x = curve(s)
    u = chart.psi_inv(x)
    J = chart.psi_inv_jacobian(x)
    Vu = np.asarray(V(u), dtype=float)
    G = metric(chart.surface, u)
    cov = np.einsum("...a,...ab,...bi->...i", Vu, G, J)
    return CubicSpline(s, cov, axis=0)


def _zero(t):
    return np.zeros(np.shape(t))


def _primary_curves(region: CompositeRegion):
    byl = dict(zip(region.labels, region.pieces))
    E = byl.get("E", byl.get("XiMinus/E"))
    P = byl.get("Pminus", byl.get("XiMinus/Pminus"))
    Ph = byl.get("Pplus")
    return E, P, Ph


def convert_boundary_data(chart: AsymptoticChart, region: CompositeRegion, q1=None, phi=None, q2=None,
                          gamma_range: Optional[tuple] = None) -> dict:
    """Boundary data of the reduced system on a Xi- or Phi region of the chart plane.

    ``q1(s)`` is ``<W, T1 zeta'>`` along the increasing curve ``beta`` (so
    ``W1 = q1 / beta1'`` there), ``q2(s)`` the same along ``beta_hat``
    (``W2 = q2 / beta_hat2'``) and ``phi(t)`` the chart components of ``W``
    along the anchor ``(t, -t)`` (lowered with the chart metric).
    """
    if not isinstance(region, CompositeRegion) or region.kind not in ("XiMinus", "Phi"):
        raise ConversionError("boundary conversion expects a XiMinus or Phi region")
    E, P, Ph = _primary_curves(region)
    gam = E.gamma
    g0 = gam(np.linspace(gam.t_start, gam.t_end, 5))
    if np.max(np.abs(g0[:, 0] + g0[:, 1])) > 1e-9 * max(1.0, np.max(np.abs(g0))):
        raise ConversionError("the E-curve of the region must lie on the anchor (t, -t)")
    ii, jj, t = anchor_samples(chart)
    gspl = CubicSpline(t, chart.g[ii, jj], axis=0)
    phi = phi if phi is not None else (lambda tt: np.zeros(np.shape(tt) + (2,)))

    def qhat(tt):
        tt = np.asarray(tt, dtype=float)
        # the anchor parameter of gamma(t) = (t, -t) is its first coordinate
        x1 = gam(tt)[..., 0]
        return np.einsum("...ij,...j->...i", gspl(x1), np.asarray(phi(x1), dtype=float))

    beta = P.beta
    db = beta.derivative(beta.t)
    if np.any(db[:, 0] <= 1e-12):
        raise ConversionError("beta1' vanishes: cannot convert q1")
    q1 = q1 if q1 is not None else _zero
    q1c = lambda s: np.asarray(q1(s), dtype=float) / beta.derivative(s)[..., 0]  # noqa: E731
    if region.kind == "XiMinus":
        return xi_minus_data(region, q1c, qhat)
    bh = Ph.beta
    if np.any(bh.derivative(bh.t)[:, 1] <= 1e-12):
        raise ConversionError("beta_hat2' vanishes: cannot convert q2")
    q2 = q2 if q2 is not None else _zero
    q2c = lambda s: np.asarray(q2(s), dtype=float) / bh.derivative(s)[..., 1]  # noqa: E731
    return phi_data(region, q1c, q2c, qhat)


def solve_strain_local(chart: AsymptoticChart, region: PlanarRegion, U: StrainTensorField, q1=None,
                       phi=None, q2=None, tol: Optional[float] = None, bc: Optional[dict] = None,
                       max_depth: int = 8) -> ShellDisplacementSurface:
    """Solve ``strain(y) = U`` on a chart-plane region and return the displacement on its nodes.

    Either pass ``q1/phi/q2`` (converted with :func:`convert_boundary_data`)
    or ready-made solver data ``bc``.
    """
    system, recover = reduce_to_char_system(chart, U)
    if bc is None:
        bc = convert_boundary_data(chart, region, q1, phi, q2)
    sol = solve_region(region, system, bc, tol=tol, grid=(chart.x1, chart.x2), max_depth=max_depth)
    W1 = np.where(sol.mask, sol.f1, 0.0)
    W2 = np.where(sol.mask, sol.f2, 0.0)
    w = recover(W1, W2, sol.mask)
    # wedge tips carry no difference stencil, so w is undefined there
    mask = sol.mask & np.isfinite(w)
    return ShellDisplacementSurface(chart, W1, W2, np.where(mask, w, 0.0), mask, sol, region)


# ---------------------------------------------------------------------------
# manufactured displacements


@dataclass
class SmoothAmbientField:
    """``y(u) = c + d x r(u) + sum_k a_k sin(<b_k, u> + c_k)``, with its exact derivative."""

    surface: SurfaceChart
    c: np.ndarray
    d: np.ndarray
    amps: np.ndarray      # (K, 3)
    freqs: np.ndarray     # (K, 2)
    phases: np.ndarray    # (K,)

    @classmethod
    def random(cls, surface: SurfaceChart, rng: np.random.Generator, terms: int = 3,
               max_freq: float = 2.0, rigid: bool = True) -> "SmoothAmbientField":
        return cls(surface,
                   rng.normal(size=3) if rigid else np.zeros(3),
                   rng.normal(size=3) if rigid else np.zeros(3),
                   rng.normal(size=(terms, 3)) / np.sqrt(terms),
                   rng.uniform(-max_freq, max_freq, size=(terms, 2)),
                   rng.uniform(0, 2 * np.pi, size=terms))

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        r = self.surface.point(u)
        arg = u @ self.freqs.T + self.phases
        return self.c + np.cross(self.d, r) + np.sin(arg) @ self.amps

    def jacobian(self, u) -> np.ndarray:
        """``dy/du`` with shape ``(..., 3, 2)``."""
        u = np.asarray(u, dtype=float)
        T = self.surface.tangents(u)
        rot = np.stack([np.cross(self.d, T[..., 0]), np.cross(self.d, T[..., 1])], axis=-1)
        arg = u @ self.freqs.T + self.phases
        osc = np.einsum("...k,ka,kb->...ab", np.cos(arg), self.amps, self.freqs)
        return rot + osc

    def tangential_u(self, u) -> np.ndarray:
        """Tangential part of ``y`` as a vector in surface parameter coordinates."""
        u = np.asarray(u, dtype=float)
        T = self.surface.tangents(u)
        y = self(u)
        G = metric(self.surface, u)
        cov = np.einsum("...a,...ai->...i", y, T)
        return np.einsum("...ij,...j->...i", inverse_metric(G), cov)

    def strain_u(self, u) -> np.ndarray:
        """Strain in surface coordinates: ``sym <dy/du_a, r_b>``."""
        T = self.surface.tangents(np.asarray(u, dtype=float))
        D = self.jacobian(u)
        S = np.einsum("...ka,...kb->...ab", D, T)
        return 0.5 * (S + np.swapaxes(S, -1, -2))


def rigid_motion(surface: SurfaceChart, c, d) -> SmoothAmbientField:
    return SmoothAmbientField(surface, np.asarray(c, float), np.asarray(d, float), np.zeros((0, 3)),
                              np.zeros((0, 2)), np.zeros(0))


def manufactured(chart: AsymptoticChart, y: SmoothAmbientField):
    """Exact node displacement and its strain in the chart basis."""
    disp = ShellDisplacementSurface.from_ambient(chart, y(chart.u))
    D = y.jacobian(chart.u) @ chart.J
    S = np.einsum("...ki,...kj->...ij", D, chart.tangents)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    U = StrainTensorField(chart, S[..., 0, 0], S[..., 0, 1], S[..., 1, 1], np.ones(chart.shape, bool))
    return disp, U


# ---------------------------------------------------------------------------
# pasting along one anchor curve


@dataclass
class OverlapReport:
    charts: tuple
    nodes: int
    max_discrepancy: float
    rms_discrepancy: float


@dataclass
class PastingResult:
    charts: list
    regions: list
    displacements: list
    transversals: list
    overlaps: list = field(default_factory=list)

    @property
    def max_overlap(self) -> float:
        return max((o.max_discrepancy for o in self.overlaps), default=0.0)


def _shifted_anchor(anchor: CurveOnSurface, tau: float, lo: float, hi: float) -> CurveOnSurface:
    der = anchor.derivative
    return CurveOnSurface(lambda t: anchor(np.asarray(t) + tau), (lo, hi),
                          None if der is None else (lambda t: der(np.asarray(t) + tau)))


def _interp_node_field(chart: AsymptoticChart, F: np.ndarray, mask: np.ndarray, x: np.ndarray) -> np.ndarray:
    from .characteristic_solver import _ghost_fill
    G = _ghost_fill(F, mask)
    spl = RectBivariateSpline(chart.x1, chart.x2, G, kx=3, ky=3)
    flat = x.reshape(-1, 2)
    return spl.ev(flat[:, 0], flat[:, 1]).reshape(x.shape[:-1])


def ambient_W_at(disp: ShellDisplacementSurface, x: np.ndarray) -> np.ndarray:
    """Ambient tangential field of a solved displacement at chart points ``x`` (cubic interpolation)."""
    a, b = disp.contravariant()
    Wa = np.where(disp.mask[..., None], disp.tangential(), 0.0)
    out = np.stack([_interp_node_field(disp.chart, Wa[..., k], disp.mask, x) for k in range(3)], axis=-1)
    return out


def t1_datum(surface: SurfaceChart, u: np.ndarray, X: np.ndarray, anchor_dir: np.ndarray,
             W_amb: np.ndarray) -> np.ndarray:
    """``<W, T1 X>`` at points ``u`` with the unit normal pointing against ``anchor_dir``."""
    Tu = surface.tangents(u)
    Gu = metric(surface, u)
    q = np.empty(len(u))
    for r in range(len(u)):
        mu = -anchor_dir / np.sqrt(anchor_dir @ Gu[r] @ anchor_dir)
        q[r] = W_amb[r] @ (Tu[r] @ boundary_operator_T(surface, u[r], 1, mu, X[r]))
    return q


def paste_charts(surface: SurfaceChart, anchor: CurveOnSurface, taus: Sequence[float], beta0: PlanarCurve,
                 U_fn: Callable, phi_fn: Callable, q1_fn: Optional[Callable] = None,
                 W_beta0: Optional[Callable] = None, n: int = 65, tol: Optional[float] = None, check: Optional[float] = None) -> PastingResult:
    """Solve along an anchor split at ``taus`` with one chart per piece and hand traces across.

    Chart ``k`` is anchored on ``anchor(tau_k + t)`` and solves on
    ``Xi-(beta_k, gamma_k)`` where ``gamma_k`` runs to ``tau_{k+2}`` (the last
    anchor point for the final charts).  ``beta_0`` is given in chart-0
    coordinates; later ``beta_k`` are the diagonal curves
    ``psi_{k-1}^{-1}(s + d, s - d)``, ``d = tau_k - tau_{k-1}``, whose data
    ``<W, T1 beta_k'>`` comes from the previous chart.

    ``U_fn(u)`` is the strain in surface coordinates, ``phi_fn(u)`` the
    tangential data along the anchor in surface coordinates and ``q1_fn(s)``
    the data on ``beta_0``.  Alternatively ``W_beta0(u)`` gives a tangential
    field (surface coordinates) whose ``<W, T1 beta_0'>`` is used there.  With ``check`` set, an overlap discrepancy above
    ``check`` raises PastingInconsistencyError.
    """
    taus = [float(t) for t in taus]
    k_total = len(taus) - 1
    if not 1 <= k_total <= 3:
        raise StrainError("pasting supports 1 to 3 charts")
    charts, regions, disps, betas, overlaps = [], [], [], [], []
    q1_current = q1_fn
    beta_current = beta0
    for k in range(k_total):
        L = taus[min(k + 2, k_total)] - taus[k]
        b_end = beta_current.end
        reach = 1.1 * max(b_end[0], b_end[1])
        steps = n - 1
        # grid step chosen so that 0 and L are nodes of the chart
        h = (L + reach) / steps
        lo = -h * np.ceil(reach / h - 1e-9)
        m = int(round((L - lo) / h)) + 1
        chart = build_chart(surface, _shifted_anchor(anchor, taus[k], lo, L), n=m)
        if k > 0:
            prev, pdisp = charts[-1], disps[-1]
            d = taus[k] - taus[k - 1]
            Lp = taus[min(k + 1, k_total)] - taus[k - 1]
            s_end = d if d <= Lp / 2 else Lp - d
            s = np.linspace(0.0, s_end, 129)
            xprev = np.stack([s + d, s - d], axis=-1)
            u = prev.psi_inv(xprev)
            xk = chart.psi(u)
            # both charts place alpha(tau_k) at the origin up to interpolation error
            xk[0] = 0.0
            beta_current = PlanarCurve(s, xk, "P")
            if xk[-1, 0] > L:
                beta_current = beta_current.restrict(0.0, float(beta_current.t_at_x1(L * (1 - 1e-9))))
            X = prev.psi_inv_jacobian(xprev) @ np.array([1.0, 1.0])
            q = t1_datum(surface, u, X, anchor.tangent(np.array(taus[k])), ambient_W_at(pdisp, xprev))
            q1_current = CubicSpline(s, q)
        elif W_beta0 is not None:
            s = np.linspace(beta0.t_start, beta0.t_end, 129)
            u = chart.psi_inv(beta0(s))
            X = chart.psi_inv_jacobian(beta0(s)) @ beta0.derivative(s)[..., None]
            Wamb = np.einsum("...ai,...i->...a", surface.tangents(u), np.asarray(W_beta0(u), dtype=float))
            q1_current = CubicSpline(s, t1_datum(surface, u, X[..., 0], anchor.tangent(np.array(taus[0])), Wamb))
        gamma_k = PlanarCurve.segment((0.0, 0.0), (L, -L), t_end=L)
        region = make_region("XiMinus", beta=beta_current, gamma=gamma_k)
        U = StrainTensorField.from_surface_tensor(chart, U_fn)
        phi = phi_components(chart, phi_fn)
        disp = solve_strain_local(chart, region, U, q1=q1_current, phi=phi, tol=tol)
        charts.append(chart)
        regions.append(region)
        disps.append(disp)
        betas.append(beta_current)
        if k > 0:
            overlaps.append(_overlap(charts[k - 1], disps[k - 1], regions[k - 1], chart, disp, (k - 1, k)))
            if check is not None and overlaps[-1].max_discrepancy > check:
                raise PastingInconsistencyError(
                    f"charts {k - 1} and {k} disagree by {overlaps[-1].max_discrepancy:.3e} on their overlap")
    return PastingResult(charts, regions, disps, betas, overlaps)


def _overlap(c0, d0, r0, c1, d1, pair) -> OverlapReport:
    idx = np.argwhere(d1.mask)
    u = c1.u[idx[:, 0], idx[:, 1]]
    x0 = c0.psi(u)
    inside = r0.contains(x0)
    # keep one grid step away from the outline of the earlier region
    h = max(abs(c0.steps[0]), abs(c0.steps[1]))
    for dx in (-h, h):
        for dy in (-h, h):
            inside &= r0.contains(x0 + np.array([dx, dy]), closed=True)
    if not inside.any():
        return OverlapReport(pair, 0, 0.0, 0.0)
    W0 = ambient_W_at(d0, x0[inside])
    W1 = d1.tangential()[idx[inside, 0], idx[inside, 1]]
    diff = np.linalg.norm(W0 - W1, axis=-1)
    return OverlapReport(pair, int(inside.sum()), float(diff.max()), float(np.sqrt(np.mean(diff ** 2))))


# ---------------------------------------------------------------------------
# connection points


@dataclass
class ConnectionResult:
    classification: str
    chart: AsymptoticChart
    region: CompositeRegion
    displacement: ShellDisplacementSurface
    beta_chart: PlanarCurve
    swapped: bool


def _extended_anchor(gamma: CurveOnSurface, lo: float) -> CurveOnSurface:
    """``gamma`` shifted to start at 0 and continued backwards along its initial tangent."""
    t0 = gamma.t_range[0]
    p0 = gamma(np.array(t0))
    d0 = gamma.tangent(np.array(t0))

    def pos(t):
        t = np.asarray(t, dtype=float)
        back = p0 + (t - t0)[..., None] * d0
        fwd = gamma(np.maximum(t, t0))
        return np.where((t < t0)[..., None], back, fwd)

    def der(t):
        t = np.asarray(t, dtype=float)
        return np.where((t < t0)[..., None], np.broadcast_to(d0, t.shape + (2,)),
                        gamma.tangent(np.maximum(t, t0)))

    return CurveOnSurface(lambda t: pos(np.asarray(t) + t0), (lo, gamma.t_range[1] - t0),
                          lambda t: der(np.asarray(t) + t0))


def connection_point_solve(surface: SurfaceChart, beta: CurveOnSurface, gamma: CurveOnSurface,
                           zeta: CurveOnSurface, U_fn: Callable, phi_fn: Callable, n: int = 65,
                           tol: Optional[float] = None) -> ConnectionResult:
    """Local solve around a corner of type H1 where ``beta`` ends and ``gamma`` starts.

    The chart is normalised on ``gamma``; ``beta`` becomes a decreasing curve
    ending at the origin and the solve runs on ``E(beta) + R + E(gamma)`` with
    the rectangle fed by the traces of both triangles.  The orientation is
    flipped if ``zeta`` does not enter the first quadrant.
    """
    kind = classify_connection(surface, beta, gamma, zeta)
    if kind != "H1":
        raise UnsupportedConnectionError(f"connection type {kind} is not H1")
    eps = gamma.t_range[1] - gamma.t_range[0]
    reach = 1.5 * eps
    for _ in range(4):
        steps = n - 1
        h = (eps + reach) / steps
        lo = -h * np.ceil(reach / h - 1e-9)
        m = int(round((eps - lo) / h)) + 1
        chart = build_chart(surface, _extended_anchor(gamma, lo), n=m)
        tb = np.linspace(*beta.t_range, 129)
        xb = chart.psi(beta(tb))
        if xb[:, 0].min() > chart.x1[0] + h and xb[:, 1].max() < chart.x2[-1] - h:
            break
        reach *= 2.0
    else:
        raise StrainError("beta does not fit into the connection chart")
    zs = zeta(np.array([0.25 * eps]))
    xz = chart.psi(zs)[0]
    swapped = False
    if not (xz[0] > 0 and xz[1] > 0):
        chart = chart.swap()
        xb = np.stack([-xb[:, 1], -xb[:, 0]], axis=-1)
        swapped = True
    bcurve = PlanarCurve(tb, xb, "E")
    e_beta = ERegion(bcurve)
    gcurve = PlanarCurve.segment((0.0, 0.0), (eps, -eps), t_end=eps)
    e_gamma = ERegion(gcurve)
    rect = RRegion((0.0, 0.0), eps, float(xb[0, 1]))
    region = make_region("Union", pieces=[e_beta, e_gamma, rect], labels=["Ebeta", "Egamma", "R"])
    U = StrainTensorField.from_surface_tensor(chart, U_fn)
    cov_b = covariant_on_curve(chart, phi_fn, bcurve)
    cov_g = covariant_on_curve(chart, phi_fn, gcurve)
    from .characteristic_solver import BoundaryData
    bc = {"Ebeta": BoundaryData.for_E(bcurve, cov_b), "Egamma": BoundaryData.for_E(gcurve, cov_g)}
    disp = solve_strain_local(chart, region, U, bc=bc, tol=tol)
    return ConnectionResult(kind, chart, region, disp, bcurve, swapped)
