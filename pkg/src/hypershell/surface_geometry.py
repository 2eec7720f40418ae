"""Differential geometry of parametric surfaces in R^3.

All evaluators are vectorised: a parameter point ``u`` may carry any leading
shape ``(..., 2)``.  Tangent vectors are given by their components in the
coordinate basis ``(r_u1, r_u2)`` of the chart.

Sign conventions
----------------
The unit normal is ``n = (r_u1 x r_u2) / |r_u1 x r_u2|`` and the second
fundamental form is ``Pi(a, b) = <grad_a n, b> = -<n, r_ab>``.  Every sign
used downstream (rotation ``Q``, the orientation sign ``chi``, the boundary
operators) derives from this single choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "SurfaceError",
    "DomainError",
    "MarginError",
    "NotHyperbolicError",
    "CharacteristicVectorError",
    "DegenerateConfigurationError",
    "FrameError",
    "SurfaceChart",
    "TangentVector",
    "CurveOnSurface",
    "monkey_saddle",
    "hyperbolic_paraboloid",
    "plane",
    "graph_surface",
    "expression_surface",
    "get_surface",
    "SURFACE_REGISTRY",
    "metric",
    "inverse_metric",
    "normal",
    "second_form",
    "gauss_curvature",
    "christoffels",
    "shape_operator",
    "rotation_matrix",
    "rotate_Q",
    "orientation_sign",
    "noncharacteristic_rho",
    "boundary_operator_T",
    "asymptotic_directions",
    "classify_connection",
    "saddle_annulus_pieces",
    "saddle_annulus_corners",
]

# strict-sign threshold, relative to the size of Pi
SIGN_RTOL = 1e-10


class SurfaceError(ValueError):
    """Base class for geometry errors."""


class DomainError(SurfaceError):
    """Parameter point outside the chart's domain."""


class MarginError(SurfaceError):
    """Finite-difference stencil does not fit inside the domain."""


class NotHyperbolicError(SurfaceError):
    """Gaussian curvature is not strictly negative."""


class CharacteristicVectorError(SurfaceError):
    """A tangent vector with Pi(X, X) = 0 was passed where it is not allowed."""


class DegenerateConfigurationError(SurfaceError):
    """A strict sign was requested of a quantity that vanishes numerically."""


class FrameError(SurfaceError):
    """Frame is not orthonormal or not positively oriented."""


Array = np.ndarray
Box = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class SurfaceChart:
    """A parametrised surface ``u -> r(u)`` over a rectangle.

    ``jacobian`` returns ``(..., 3, 2)`` with columns ``r_u1, r_u2`` and
    ``hessian`` returns ``(..., 3, 2, 2)``.  When either is missing the chart
    falls back to central differences with step ``1e-5 * diameter``
    (first derivatives) and a fourth-order stencil at ``1e-3 * diameter``
    (second derivatives).
    """

    name: str
    position: Callable[[Array], Array]
    domain: Box
    jacobian: Optional[Callable[[Array], Array]] = None
    hessian: Optional[Callable[[Array], Array]] = None
    description: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def diameter(self) -> float:
        (a1, b1), (a2, b2) = self.domain
        return float(np.hypot(b1 - a1, b2 - a2))

    @property
    def analytic(self) -> bool:
        return self.jacobian is not None and self.hessian is not None

    @property
    def fd_step(self) -> float:
        return 1e-5 * self.diameter

    @property
    def fd_step2(self) -> float:
        return 1e-3 * self.diameter

    def check_domain(self, u: Array, margin: float = 0.0) -> Array:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != 2:
            raise DomainError(f"parameter points need a trailing axis of length 2, got {u.shape}")
        (a1, b1), (a2, b2) = self.domain
        tol = 1e-12 * max(1.0, self.diameter)
        inside = (
            (u[..., 0] >= a1 - tol)
            & (u[..., 0] <= b1 + tol)
            & (u[..., 1] >= a2 - tol)
            & (u[..., 1] <= b2 + tol)
        )
        if not np.all(inside):
            raise DomainError(f"point(s) outside parameter domain {self.domain} of '{self.name}'")
        if margin > 0.0:
            ok = (
                (u[..., 0] - margin >= a1 - tol)
                & (u[..., 0] + margin <= b1 + tol)
                & (u[..., 1] - margin >= a2 - tol)
                & (u[..., 1] + margin <= b2 + tol)
            )
            if not np.all(ok):
                raise MarginError(
                    f"finite-difference stencil of width {margin:g} leaves the domain of '{self.name}'"
                )
        return u

    def point(self, u: Array) -> Array:
        u = self.check_domain(u)
        return np.asarray(self.position(u), dtype=float)

    def tangents(self, u: Array) -> Array:
        """Columns ``r_u1, r_u2``; shape ``(..., 3, 2)``."""
        if self.jacobian is not None:
            u = self.check_domain(u)
            return np.asarray(self.jacobian(u), dtype=float)
        h = self.fd_step
        u = self.check_domain(u, margin=h)
        cols = []
        for a in range(2):
            e = np.zeros(2)
            e[a] = h
            cols.append((self.position(u + e) - self.position(u - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def second_derivatives(self, u: Array) -> Array:
        """``r_ab``; shape ``(..., 3, 2, 2)``."""
        if self.hessian is not None:
            u = self.check_domain(u)
            return np.asarray(self.hessian(u), dtype=float)
        h = self.fd_step2
        u = self.check_domain(u, margin=2 * h)
        f = self.position
        out = np.empty(u.shape[:-1] + (3, 2, 2))
        e = np.eye(2) * h
        f0 = f(u)
        for a in range(2):
            fp1, fm1 = f(u + e[a]), f(u - e[a])
            fp2, fm2 = f(u + 2 * e[a]), f(u - 2 * e[a])
            out[..., a, a] = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
        # mixed derivative, fourth order
        ea, eb = e[0], e[1]

        def mixed(s: float) -> Array:
            return (
                f(u + s * (ea + eb)) - f(u + s * (ea - eb)) - f(u - s * (ea - eb)) + f(u - s * (ea + eb))
            ) / (4 * s * s * h * h)

        m = (4 * mixed(1.0) - mixed(2.0)) / 3.0
        out[..., 0, 1] = m
        out[..., 1, 0] = m
        return out


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector at ``base`` with coordinate components ``comps``."""

    base: Array
    comps: Array

    def norm2(self, chart: SurfaceChart) -> float:
        G = metric(chart, self.base)
        c = np.asarray(self.comps, dtype=float)
        return float(c @ G @ c)


@dataclass(frozen=True)
class CurveOnSurface:
    """Parametrised curve ``t -> u(t)`` in the parameter plane of a chart."""

    position: Callable[[Array], Array]
    t_range: tuple[float, float]
    derivative: Optional[Callable[[Array], Array]] = None

    def __call__(self, t) -> Array:
        return np.asarray(self.position(np.asarray(t, dtype=float)), dtype=float)

    def tangent(self, t) -> Array:
        t = np.asarray(t, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(t), dtype=float)
        length = self.t_range[1] - self.t_range[0]
        h = 1e-6 * max(abs(length), 1e-12)
        return (self.position(t + h) - self.position(t - h)) / (2 * h)

    def is_regular(self, samples: int = 65, tol: float = 1e-12) -> bool:
        ts = np.linspace(*self.t_range, samples)
        d = np.atleast_2d(self.tangent(ts))
        return bool(np.all(np.linalg.norm(d, axis=-1) > tol))

    def reversed(self) -> "CurveOnSurface":
        a, b = self.t_range
        pos = self.position
        der = self.derivative
        return CurveOnSurface(
            position=lambda t: pos(a + b - np.asarray(t)),
            t_range=(a, b),
            derivative=None if der is None else (lambda t: -der(a + b - np.asarray(t))),
        )


# ---------------------------------------------------------------------------
# built-in surfaces


def graph_surface(
    name: str,
    height: Callable[[Array], Array],
    gradient: Callable[[Array], Array],
    hessian: Callable[[Array], Array],
    domain: Box,
    description: str = "",
) -> SurfaceChart:
    """Chart of the graph ``(u1, u2, h(u))`` with analytic derivatives.

    ``gradient`` returns ``(..., 2)`` and ``hessian`` returns ``(..., 2, 2)``.
    """

    def position(u: Array) -> Array:
        return np.stack([u[..., 0], u[..., 1], height(u)], axis=-1)

    def jac(u: Array) -> Array:
        gr = gradient(u)
        out = np.zeros(u.shape[:-1] + (3, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 2, :] = gr
        return out

    def hess(u: Array) -> Array:
        out = np.zeros(u.shape[:-1] + (3, 2, 2))
        out[..., 2, :, :] = hessian(u)
        return out

    return SurfaceChart(name=name, position=position, domain=domain, jacobian=jac, hessian=hess,
                        description=description)


def monkey_saddle(domain: Box = ((-3.0, 3.0), (-3.0, 3.0))) -> SurfaceChart:
    """Graph of ``h = x1^3 - 3 x1 x2^2``."""

    def h(u):
        x, y = u[..., 0], u[..., 1]
        return x**3 - 3 * x * y**2

    def grad(u):
        x, y = u[..., 0], u[..., 1]
        return np.stack([3 * (x**2 - y**2), -6 * x * y], axis=-1)

    def hess(u):
        x, y = u[..., 0], u[..., 1]
        out = np.empty(u.shape[:-1] + (2, 2))
        out[..., 0, 0] = 6 * x
        out[..., 0, 1] = -6 * y
        out[..., 1, 0] = -6 * y
        out[..., 1, 1] = -6 * x
        return out

    return graph_surface("monkey_saddle", h, grad, hess, domain, "graph of x1^3 - 3 x1 x2^2")


def hyperbolic_paraboloid(domain: Box = ((-3.0, 3.0), (-3.0, 3.0))) -> SurfaceChart:
    """Graph of ``z = u v``."""

    def h(u):
        return u[..., 0] * u[..., 1]

    def grad(u):
        return np.stack([u[..., 1], u[..., 0]], axis=-1)

    def hess(u):
        out = np.zeros(u.shape[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = 1.0
        return out

    return graph_surface("hyperbolic_paraboloid", h, grad, hess, domain, "graph of u*v")


def plane(domain: Box = ((-1.0, 1.0), (-1.0, 1.0))) -> SurfaceChart:
    """The flat plane ``z = 0``; used for rejection paths and flat-metric checks."""
    return graph_surface(
        "plane",
        lambda u: np.zeros(u.shape[:-1]),
        lambda u: np.zeros(u.shape),
        lambda u: np.zeros(u.shape[:-1] + (2, 2)),
        domain,
        "flat plane",
    )


SURFACE_REGISTRY: dict[str, Callable[..., SurfaceChart]] = {
    "monkey_saddle": monkey_saddle,
    "hyperbolic_paraboloid": hyperbolic_paraboloid,
    "plane": plane,
}


def get_surface(name: str, domain: Optional[Box] = None) -> SurfaceChart:
    try:
        factory = SURFACE_REGISTRY[name]
    except KeyError as exc:
        raise SurfaceError(f"unknown surface '{name}'; known: {sorted(SURFACE_REGISTRY)}") from exc
    return factory() if domain is None else factory(domain)


def expression_surface(
    components: Sequence[str],
    domain: Box,
    variables: Sequence[str] = ("u", "v"),
    name: str = "user_surface",
) -> SurfaceChart:
    """Surface from three expression strings in two variables.

    Expressions are parsed by sympy and evaluated with numpy.  Derivatives
    are taken by finite differences (the chart carries no analytic callbacks).
    """
    import sympy as sp

    if len(components) != 3:
        raise SurfaceError("a surface needs exactly three component expressions")
    syms = sp.symbols(list(variables))
    try:
        exprs = [sp.sympify(c, locals={str(s): s for s in syms}) for c in components]
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise SurfaceError(f"cannot parse surface expressions {components!r}: {exc}") from exc
    free = set().union(*(e.free_symbols for e in exprs))
    if not free <= set(syms):
        raise SurfaceError(f"unknown symbols {sorted(map(str, free - set(syms)))} in surface expressions")
    funcs = [sp.lambdify(syms, e, modules="numpy") for e in exprs]

    def position(u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        cols = [np.broadcast_to(np.asarray(f(u[..., 0], u[..., 1]), dtype=float), u.shape[:-1]) for f in funcs]
        return np.stack(cols, axis=-1)

    return SurfaceChart(name=name, position=position, domain=tuple(map(tuple, domain)),
                        description=" , ".join(components))


# ---------------------------------------------------------------------------
# pointwise geometry


def metric(chart: SurfaceChart, u: Array) -> Array:
    """First fundamental form ``G(u)``, shape ``(..., 2, 2)``."""
    T = chart.tangents(u)
    return np.einsum("...ka,...kb->...ab", T, T)


def inverse_metric(G: Array) -> Array:
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1] / det
    inv[..., 1, 1] = G[..., 0, 0] / det
    inv[..., 0, 1] = -G[..., 0, 1] / det
    inv[..., 1, 0] = -G[..., 1, 0] / det
    return inv


def _unit_normal_from_tangents(T: Array) -> Array:
    c = np.cross(T[..., :, 0], T[..., :, 1])
    return c / np.linalg.norm(c, axis=-1, keepdims=True)


def normal(chart: SurfaceChart, u: Array) -> Array:
    """Unit normal ``(r_u1 x r_u2)/|r_u1 x r_u2|``."""
    return _unit_normal_from_tangents(chart.tangents(u))


def second_form(chart: SurfaceChart, u: Array) -> Array:
    """``Pi_ab = <grad_{r_a} n, r_b> = -<n, r_ab>``, shape ``(..., 2, 2)``."""
    n = normal(chart, u)
    H = chart.second_derivatives(u)
    P = -np.einsum("...k,...kab->...ab", n, H)
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _det2(A: Array) -> Array:
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def gauss_curvature(chart: SurfaceChart, u: Array) -> Array:
    return _det2(second_form(chart, u)) / _det2(metric(chart, u))


def christoffels(chart: SurfaceChart, u: Array) -> Array:
    """Christoffel symbols ``Gamma[..., k, i, j]`` of the induced metric.

    Uses ``Gamma^k_ij = g^{kl} <r_ij, r_l>``, which equals the metric formula
    ``1/2 g^{kl}(d_i g_jl + d_j g_il - d_l g_ij)``.
    """
    T = chart.tangents(u)
    H = chart.second_derivatives(u)
    first_kind = np.einsum("...kij,...kl->...ijl", H, T)
    Ginv = inverse_metric(np.einsum("...ka,...kb->...ab", T, T))
    return np.einsum("...kl,...ijl->...kij", Ginv, first_kind)


def shape_operator(chart: SurfaceChart, u: Array) -> Array:
    """Matrix ``S`` with ``grad_X n = S X`` in coordinate components."""
    return inverse_metric(metric(chart, u)) @ second_form(chart, u)


# ---------------------------------------------------------------------------
# rotation and boundary operators


def rotation_matrix(G: Array) -> Array:
    """Coordinate matrix of the clockwise quarter turn ``Q``.

    For a positive orthonormal frame ``Q e1 = -e2`` and ``Q e2 = e1``; in
    coordinates ``Q = -sqrt(det G) G^{-1} [[0, -1], [1, 0]]``.
    """
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    return -np.sqrt(_det2(G))[..., None, None] * (inverse_metric(G) @ R)


def rotate_Q(e1: Array, e2: Array, alpha: Array, G: Array, tol: float = 1e-10) -> Array:
    """Apply ``Q alpha = <alpha, e2> e1 - <alpha, e1> e2`` for an explicit frame.

    ``e1``, ``e2`` and ``alpha`` are coordinate components, ``G`` the metric
    at the base point.  The frame must be orthonormal and positively
    oriented (``det(e1, e2, n) > 0``).
    """
    e1, e2, alpha, G = (np.asarray(a, dtype=float) for a in (e1, e2, alpha, G))
    gram = np.array([[e1 @ G @ e1, e1 @ G @ e2], [e2 @ G @ e1, e2 @ G @ e2]])
    if np.max(np.abs(gram - np.eye(2))) > tol:
        raise FrameError("frame is not orthonormal")
    if e1[0] * e2[1] - e1[1] * e2[0] <= 0:
        raise FrameError("frame is not positively oriented")
    return (alpha @ G @ e2) * e1 - (alpha @ G @ e1) * e2


def orientation_sign(mu: Array, X: Array) -> float:
    """``chi(mu, X) = sign det(mu, X, n)`` for coordinate components.

    With ``n`` along ``r_u1 x r_u2`` this is the sign of the planar determinant.
    """
    return float(np.sign(mu[0] * X[1] - mu[1] * X[0]))


def noncharacteristic_rho(P: Array, kappa: float, X: Array, tol: float = SIGN_RTOL) -> float:
    """``rho(X) = sign Pi(X, X) / sqrt(-kappa)``."""
    if kappa >= 0:
        raise NotHyperbolicError(f"rho needs negative curvature, got {kappa:g}")
    pxx = float(X @ P @ X)
    scale = np.linalg.norm(P) * float(X @ X)
    if abs(pxx) <= tol * max(scale, 1e-300):
        raise CharacteristicVectorError("Pi(X, X) vanishes: X is an asymptotic direction")
    return float(np.sign(pxx)) / np.sqrt(-kappa)


def boundary_operator_T(
    chart: SurfaceChart,
    u: Array,
    i: int,
    mu: Array,
    X: Array,
    basis: Optional[Array] = None,
) -> Array:
    """Boundary operator ``T_i X = (X + (-1)^i chi(mu, X) rho(X) Q grad_X n) / 2``.

    ``mu`` and ``X`` are components in the chart's coordinate basis, or in
    ``basis`` when given (a ``2x2`` matrix whose columns are the basis
    vectors expressed in chart coordinates).  The result uses the same basis.
    """
    if i not in (1, 2):
        raise ValueError("boundary operator index must be 1 or 2")
    u = np.asarray(u, dtype=float)
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=float)
    B = np.eye(2) if basis is None else np.asarray(basis, dtype=float)
    mu_c, X_c = B @ mu, B @ X
    G = metric(chart, u)
    P = second_form(chart, u)
    kappa = float(_det2(P) / _det2(G))
    if abs(float(mu_c @ G @ mu_c) - 1.0) > 1e-8:
        raise FrameError("mu must be a unit vector")
    rho = noncharacteristic_rho(P, kappa, X_c)
    # chi as an ambient determinant; B may reverse orientation so use chart components
    chi = orientation_sign(mu_c, X_c)
    if chi == 0.0:
        raise DegenerateConfigurationError("mu and X are parallel")
    QSX = rotation_matrix(G) @ (inverse_metric(G) @ P @ X_c)
    T_c = 0.5 * (X_c + (-1) ** i * chi * rho * QSX)
    return np.linalg.solve(B, T_c)


def asymptotic_directions(chart: SurfaceChart, u: Array) -> tuple[Array, Array]:
    """The two g-unit asymptotic directions ``(A_plus, A_minus)``.

    Each root of ``Pi(X, X) = 0`` is signed so that its first component is
    positive (second component on a tie); ``A_plus`` is the root with the
    larger first component, ties broken by the larger second component.
    """
    P = second_form(chart, u)
    G = metric(chart, u)
    kappa = _det2(P) / _det2(G)
    if np.any(~(kappa < 0)):
        raise NotHyperbolicError("asymptotic directions need negative Gaussian curvature")
    p11, p12, p22 = P[..., 0, 0], P[..., 0, 1], P[..., 1, 1]
    D = np.sqrt(np.maximum(p12 * p12 - p11 * p22, 0.0))
    sgn = np.where(p12 >= 0, 1.0, -1.0)
    q = -(p12 + sgn * D)
    v1 = np.stack([q, p11], axis=-1)
    v2 = np.stack([p22, q], axis=-1)
    dirs = []
    for v in (v1, v2):
        nrm = np.sqrt(np.einsum("...a,...ab,...b->...", v, G, v))
        v = v / nrm[..., None]
        scale_tol = 1e-12
        flip = (v[..., 0] < -scale_tol) | ((np.abs(v[..., 0]) <= scale_tol) & (v[..., 1] < 0))
        dirs.append(np.where(flip[..., None], -v, v))
    a, b = dirs
    tie = np.abs(a[..., 0] - b[..., 0]) <= 1e-12
    a_first = np.where(tie, a[..., 1] >= b[..., 1], a[..., 0] > b[..., 0])
    plus = np.where(a_first[..., None], a, b)
    minus = np.where(a_first[..., None], b, a)
    return plus, minus


# ---------------------------------------------------------------------------
# connection conditions


def _side_tangent(curve: CurveOnSurface, t: float, side: int) -> Array:
    """Tangent at ``t`` from the side ``sign(side)`` of the parameter interval."""
    if curve.derivative is not None:
        return np.asarray(curve.derivative(np.asarray(t, dtype=float)), dtype=float)
    length = curve.t_range[1] - curve.t_range[0]
    h = 1e-5 * max(abs(length), 1e-12)
    f0, f1, f2 = (curve(t + side * k * h) for k in (0, 1, 2))
    return side * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)


def classify_connection(
    chart: SurfaceChart,
    beta: CurveOnSurface,
    gamma: CurveOnSurface,
    zeta: CurveOnSurface,
    rtol: float = SIGN_RTOL,
) -> Optional[str]:
    """Classify the corner where ``beta`` ends and ``gamma`` starts.

    ``beta`` is evaluated at the end of its interval, ``gamma`` at the start
    of its interval and ``zeta`` at parameter ``0``.  Returns ``"H1"`` ...
    ``"H4"`` or ``None``.
    """
    t_end = beta.t_range[1]
    t_start = gamma.t_range[0]
    p = beta(t_end)
    if not (np.allclose(p, gamma(t_start), atol=1e-8) and np.allclose(p, zeta(0.0), atol=1e-8)):
        raise DegenerateConfigurationError("beta, gamma and zeta do not meet at one point")
    P = second_form(chart, p)
    G = metric(chart, p)

    def unit(v):
        v = np.asarray(v, dtype=float)
        return v / np.sqrt(v @ G @ v)

    # one-sided differences: a central stencil would straddle the corner
    b = unit(_side_tangent(beta, t_end, -1))
    g = unit(_side_tangent(gamma, t_start, +1))
    z = unit(zeta.tangent(0.0))
    tol = rtol * np.linalg.norm(P)

    def sgn(x: float) -> int:
        return 0 if abs(x) < tol else (1 if x > 0 else -1)

    pbb, pgg = sgn(b @ P @ b), sgn(g @ P @ g)
    pbg, pzg = sgn(b @ P @ g), sgn(z @ P @ g)
    pzz, pzb = sgn(z @ P @ z), sgn(z @ P @ b)
    if pbb == 0 or pgg == 0:
        raise DegenerateConfigurationError("beta or gamma is characteristic at the corner")
    if pbb * pgg > 0:
        if pbg * pgg >= 0:
            return "H1"
        if pzg == 0:
            raise DegenerateConfigurationError("Pi(zeta', gamma') vanishes where (H2) needs a sign")
        return "H2" if pzg * pgg > 0 else None
    if pzz == 0:
        raise DegenerateConfigurationError("zeta is characteristic at the corner")
    if pzz * pgg > 0:
        return "H3" if pzg * pgg >= 0 else None
    if pzb == 0:
        raise DegenerateConfigurationError("Pi(zeta', beta') vanishes where (H4) needs a sign")
    return "H4" if pzb * pzz < 0 else None


# ---------------------------------------------------------------------------
# the three-piece annular strip on the monkey saddle

_R3 = np.sqrt(3.0)
# corner parameters: (t_k, incoming piece, t where it ends, outgoing piece)
_ANNULUS_CORNERS = ((0.0, 2, 4.0, 0), (2.0, 0, 2.0, 1), (3.0, 1, 3.0, 2))


def saddle_annulus_pieces(b: float, s: float) -> list[CurveOnSurface]:
    """The three smooth pieces of the closed level curve ``s`` of the annular strip.

    The strip is ``{alpha(t, s) : t in [0, 4), s in [0, b]}`` with the plane
    curve scaled by ``c = 2b - s``; pieces live on ``[0, 2]``, ``[2, 3]`` and
    ``[3, 4]`` and carry exact derivatives.
    """
    if not b > 1.0 or not 0.0 <= s <= b:
        raise DegenerateConfigurationError("need b > 1 and 0 <= s <= b")
    c = 2.0 * b - s

    def const(v):
        return lambda t: np.broadcast_to(np.asarray(v, dtype=float), np.shape(t) + (2,))

    return [
        CurveOnSurface(lambda t: np.stack([c * (1 - np.asarray(t)), c * np.asarray(t) / _R3], -1), (0.0, 2.0),
                       const([-c, c / _R3])),
        CurveOnSurface(lambda t: np.stack([np.full(np.shape(t), -c), 2 * c / _R3 * (5 - 2 * np.asarray(t))], -1),
                       (2.0, 3.0), const([0.0, -4 * c / _R3])),
        CurveOnSurface(lambda t: np.stack([c * (2 * np.asarray(t) - 7), -2 * c / _R3 * (4 - np.asarray(t))], -1),
                       (3.0, 4.0), const([2 * c, 2 * c / _R3])),
    ]


def saddle_annulus_corners(b: float, s: float, eps: float = 1e-2):
    """``(t_k, beta, gamma, zeta)`` at the three corners of level ``s``.

    ``beta`` is the incoming piece on its last ``eps`` of parameter, ``gamma``
    the outgoing piece on its first ``eps`` and ``zeta(t) = alpha(t_k, s + t)``.
    """
    pieces = saddle_annulus_pieces(b, s)
    out = []
    for tk, kin, tin, kout in _ANNULUS_CORNERS:
        pin, pout = pieces[kin], pieces[kout]
        beta = CurveOnSurface(lambda t, p=pin, a=tin: p(a - eps + np.asarray(t)), (0.0, eps),
                              lambda t, p=pin, a=tin: p.derivative(a - eps + np.asarray(t)))
        gamma = CurveOnSurface(lambda t, p=pout, a=tk: p(a + np.asarray(t)), (0.0, eps),
                               lambda t, p=pout, a=tk: p.derivative(a + np.asarray(t)))
        # alpha(t_k, s) is linear in c = 2b - s
        unit = pout(np.asarray(tk)) / (2.0 * b - s)
        zeta = CurveOnSurface(lambda t, u=unit: (2.0 * b - s - np.asarray(t))[..., None] * u, (-eps, eps),
                              lambda t, u=unit: -np.broadcast_to(u, np.shape(t) + (2,)))
        out.append((tk, beta, gamma, zeta))
    return out
