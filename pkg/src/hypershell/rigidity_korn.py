"""Rigidity identities, estimate probes and the thin-shell Korn scaling experiment.

Shell displacements are written as ``y = a^1 r_1 + a^2 r_2 + b n`` over the
shell ``r(u) + t n(u)``; the ambient gradient follows from the chain rule
``grad y = [d_1 y, d_2 y, d_t y] (D Phi)^{-1}`` with ``Phi(u, t) = r + t n``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.integrate import trapezoid

from .surface_geometry import (
    SurfaceChart,
    christoffels,
    inverse_metric,
    metric,
    normal,
    second_form,
)

__all__ = [
    "RigidityError",
    "InvalidShellError",
    "SaturationError",
    "ShellModel",
    "ShellDisplacement3D",
    "QuotientRecord",
    "ScalingFit",
    "korn_quotient",
    "korn_gram",
    "max_generalized_eigenvalue",
    "fit_scaling",
    "saturated_quotient",
    "write_records_csv",
    "write_records_json",
    "shell_frame",
    "lemma51_identity_check",
    "divergence_identity_check",
    "divergence_identity_grid",
    "divergence_identity_surface",
    "random_shell_displacement",
    "surface_fields",
    "EstimateReport",
    "rigidity_estimate_probe",
    "random_probe_fields",
]


class RigidityError(RuntimeError):
    pass


class InvalidShellError(RigidityError, ValueError):
    pass


class SaturationError(RigidityError):
    def __init__(self, msg: str, report: Optional[dict] = None):
        super().__init__(msg)
        self.report = report or {}


# ---------------------------------------------------------------------------
# shell geometry


def shell_frame(surface: SurfaceChart, u: np.ndarray) -> dict:
    """Frame fields at surface points: ``r_a``, ``r_ab``, ``n``, ``n_a`` (Weingarten), ``g``, ``Pi``."""
    T = surface.tangents(u)
    H = surface.second_derivatives(u)
    n = normal(surface, u)
    G = metric(surface, u)
    P = second_form(surface, u)
    Gi = inverse_metric(G)
    # n_a = Pi_ab g^bc r_c
    dn = np.einsum("...ab,...bc,...kc->...ka", P, Gi, T)
    return {"r": T, "rr": H, "n": n, "dn": dn, "g": G, "g_inv": Gi, "Pi": P}


def principal_bound(surface: SurfaceChart, u: np.ndarray) -> float:
    """Largest absolute principal curvature over the sample points."""
    P = second_form(surface, u)
    Gi = inverse_metric(metric(surface, u))
    ev = np.linalg.eigvals(Gi @ P)
    return float(np.max(np.abs(ev)))


@dataclass
class ShellModel:
    """Shell of thickness ``h`` around the box ``u1 x u2`` of a surface.

    ``w = 0`` on the whole lateral boundary; the tangential part vanishes on
    the three sides other than ``free_side`` (``"top"`` is ``u2 = max``).
    """

    surface: SurfaceChart
    box: tuple
    h: float
    t_nodes: int = 5
    free_side: str = "top"
    modes: str = "legendre"

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidShellError("thickness must be positive")
        if self.modes not in _MODES:
            raise InvalidShellError(f"unknown surface modes {self.modes!r}")
        if self.free_side not in ("top", "bottom", "left", "right"):
            raise InvalidShellError(f"unknown free side {self.free_side!r}")
        (a1, b1), (a2, b2) = self.box
        g = np.stack(np.meshgrid(np.linspace(a1, b1, 17), np.linspace(a2, b2, 17), indexing="ij"), -1)
        if 0.5 * self.h * principal_bound(self.surface, g) >= 1.0:
            raise InvalidShellError("shell map is not injective: h/2 times a principal curvature reaches 1")

    def t_quadrature(self):
        x, w = npleg.leggauss(self.t_nodes)
        return 0.5 * self.h * x, 0.5 * self.h * w

    @property
    def weights_sum(self) -> float:
        return float(self.t_quadrature()[1].sum())


@dataclass
class ShellDisplacement3D:
    """``y = a^1 r_1 + a^2 r_2 + b n`` with ``a``, ``b`` callables of ``(u, t)``."""

    surface: SurfaceChart
    a: Callable[[np.ndarray, np.ndarray], np.ndarray]   # -> (..., 2)
    b: Callable[[np.ndarray, np.ndarray], np.ndarray]   # -> (...)

    def __call__(self, u, t) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        A = np.asarray(self.a(u, t), dtype=float)
        T = self.surface.tangents(u)
        return np.einsum("...ka,...a->...k", T, A) + np.asarray(self.b(u, t))[..., None] * normal(self.surface, u)


# ---------------------------------------------------------------------------
# Korn quotient over a boundary-conforming subspace


def _sine_modes(K: int, x: np.ndarray, half: bool):
    """``sin(k pi x)`` (or ``sin((k - 1/2) pi x)``) for ``k = 1..K`` and their derivatives."""
    k = np.arange(1, K + 1, dtype=float)
    if half:
        k = k - 0.5
    arg = np.pi * k[:, None] * x[None, :]
    return np.sin(arg), np.pi * k[:, None] * np.cos(arg)


def _lobatto_modes(K: int, x: np.ndarray, half: bool):
    """Boundary-conforming Legendre modes on ``[0, 1]`` and their derivatives.

    Both ends clamped: ``(P_{k+1} - P_{k-1})(s) / (2k + 1)`` with ``s = 2x - 1``.
    Only ``x = 0`` clamped (``half``): ``(1 + s) P_{k-1}(s) / 2``.
    """
    s = 2.0 * x - 1.0
    V = np.empty((K, x.size))
    dV = np.empty((K, x.size))
    for k in range(1, K + 1):
        if half:
            c = np.zeros(k)
            c[k - 1] = 1.0
            p, dp = npleg.legval(s, c), npleg.legval(s, npleg.legder(c))
            V[k - 1] = 0.5 * (1 + s) * p
            dV[k - 1] = p + (1 + s) * dp          # d/dx = 2 d/ds
        else:
            c = np.zeros(k + 2)
            c[k + 1], c[k - 1] = 1.0, -1.0
            V[k - 1] = npleg.legval(s, c) / (2 * k + 1)
            dV[k - 1] = 2.0 * npleg.legval(s, npleg.legder(c)) / (2 * k + 1)
    return V, dV


_MODES = {"sine": _sine_modes, "legendre": _lobatto_modes}


@dataclass
class _Basis:
    K: int
    degree: int
    labels: list          # (component, k, l, d)

    @property
    def dim(self) -> int:
        return len(self.labels)


def _gram_chunks(shell: ShellModel, K: int, degree: int, surf_nodes: Optional[int] = None):
    (a1, b1), (a2, b2) = shell.box
    L1, L2 = b1 - a1, b2 - a2
    nq = surf_nodes or (2 * K + 12)
    xg, wg = npleg.leggauss(nq)
    xi = 0.5 * (xg + 1.0)
    wx = 0.5 * wg
    tq, tw = shell.t_quadrature()

    U = np.stack(np.meshgrid(a1 + L1 * xi, a2 + L2 * xi, indexing="ij"), -1)
    fr = shell_frame(shell.surface, U)
    # lateral boundary conditions: w on four sides, tangential parts on three
    free = shell.free_side
    along_x_half = free == "right" or free == "left"
    modes = _MODES[shell.modes]
    Xw, dXw = modes(K, xi, False)
    Yw, dYw = modes(K, xi, False)
    Xa, dXa = modes(K, xi if free != "left" else 1 - xi, along_x_half)
    Ya, dYa = modes(K, xi if free != "bottom" else 1 - xi, not along_x_half)
    if free == "left":
        dXa = -dXa
    if free == "bottom":
        dYa = -dYa
    dXw, dYw, dXa, dYa = dXw / L1, dYw / L2, dXa / L1, dYa / L2

    degs = np.arange(degree + 1)
    s = 2.0 * tq / shell.h
    Lt = np.stack([npleg.legval(s, np.eye(degree + 1)[d]) for d in degs])             # (D, nt)
    dLt = np.stack([npleg.legval(s, npleg.legder(np.eye(degree + 1)[d])) for d in degs]) * 2.0 / shell.h

    r, rr, n, dn = fr["r"], fr["rr"], fr["n"], fr["dn"]
    sqrtg = np.sqrt(np.linalg.det(fr["g"]))
    P = fr["Pi"]
    Gi = fr["g_inv"]
    H2 = np.einsum("...ab,...ab->...", Gi, P)          # 2H
    kap = np.linalg.det(P) / np.linalg.det(fr["g"])
    labels = []
    for c in range(3):
        for k in range(K):
            for l in range(K):
                for d in degs:
                    labels.append((c, k + 1, l + 1, int(d)))
    basis = _Basis(K, degree, labels)

    for it, t in enumerate(tq):
        DPhi = np.stack([r[..., 0] + t * dn[..., 0], r[..., 1] + t * dn[..., 1], n], axis=-1)
        Pinv = np.linalg.inv(DPhi)                                  # rows j -> ambient covector
        vol = sqrtg * (1.0 + t * H2 + t * t * kap) * tw[it] * np.outer(wx, wx) * L1 * L2
        if np.any(vol <= 0):
            raise InvalidShellError("shell volume element is not positive")
        sw = np.sqrt(vol)
        # per component c: e, e_1, e_2
        vecs = [(r[..., 0], rr[..., 0, 0], rr[..., 0, 1]), (r[..., 1], rr[..., 1, 0], rr[..., 1, 1]),
                (n, dn[..., 0], dn[..., 1])]
        rows_out = []
        for c, (e, e1, e2) in enumerate(vecs):
            if c < 2:
                X, dX, Y, dY = Xa, dXa, Ya, dYa
            else:
                X, dX, Y, dY = Xw, dXw, Yw, dYw
            # M = phi * (L (e1 x R0 + e2 x R1) + L' e x R2) + d1phi * L e x R0 + d2phi * L e x R1
            R0, R1, R2 = Pinv[..., 0, :], Pinv[..., 1, :], Pinv[..., 2, :]
            A0 = np.einsum("...i,...j->...ij", e1, R0) + np.einsum("...i,...j->...ij", e2, R1)
            A1 = np.einsum("...i,...j->...ij", e, R2)
            B1 = np.einsum("...i,...j->...ij", e, R0)
            B2 = np.einsum("...i,...j->...ij", e, R1)
            for d in degs:
                Pm = Lt[d, it] * A0 + dLt[d, it] * A1                # (nq, nq, 3, 3)
                Q1 = Lt[d, it] * B1
                Q2 = Lt[d, it] * B2
                rows_out.append((c, d, Pm * sw[..., None, None], Q1 * sw[..., None, None],
                                 Q2 * sw[..., None, None], X, dX, Y, dY))
        yield basis, rows_out


def _assemble(basis: _Basis, rows_out, sym: bool) -> np.ndarray:
    K = basis.K
    D = basis.degree + 1
    blocks = np.empty((3, K, K, D) + rows_out[0][2].shape[:2] + (9,))
    for c, d, Pm, Q1, Q2, X, dX, Y, dY in rows_out:
        if sym:
            Pm = 0.5 * (Pm + np.swapaxes(Pm, -1, -2))
            Q1 = 0.5 * (Q1 + np.swapaxes(Q1, -1, -2))
            Q2 = 0.5 * (Q2 + np.swapaxes(Q2, -1, -2))
        Pm, Q1, Q2 = (m.reshape(m.shape[:2] + (9,)) for m in (Pm, Q1, Q2))
        blocks[c, :, :, d] = (np.einsum("kp,lq,pqm->klpqm", X, Y, Pm)
                              + np.einsum("kp,lq,pqm->klpqm", dX, Y, Q1)
                              + np.einsum("kp,lq,pqm->klpqm", X, dY, Q2))
    G = blocks.reshape(basis.dim, -1)
    return G @ G.T


def korn_gram(shell: ShellModel, K: int, degree: int = 2, surf_nodes: Optional[int] = None):
    """Gram matrices ``A = ||grad y||^2`` and ``B = ||sym grad y||^2`` over the tensor basis."""
    A = B = None
    basis = None
    for basis, rows_out in _gram_chunks(shell, K, degree, surf_nodes):
        a = _assemble(basis, rows_out, False)
        b = _assemble(basis, rows_out, True)
        A = a if A is None else A + a
        B = b if B is None else B + b
    return A, B, basis


def max_generalized_eigenvalue(A: np.ndarray, B: np.ndarray, rel_cut: float = 1e-12,
                               tol: float = 1e-12, max_iter: int = 5000):
    """Largest ``lambda`` of ``A v = lambda B v``.

    ``B`` is whitened by its eigen-decomposition; directions with eigenvalue
    below ``rel_cut * max`` are deflated.  The top eigenvalue of the whitened
    matrix is found by shifted power iteration with Rayleigh refinement and
    cross-checked against a dense symmetric solve.
    """
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    # equilibrate so the cut is scale-free
    s = 1.0 / np.sqrt(np.maximum(np.diag(A), 1e-300))
    A, B = A * s[:, None] * s[None, :], B * s[:, None] * s[None, :]
    mu, V = np.linalg.eigh(B)
    keep = mu > rel_cut * mu.max()
    deflated = int((~keep).sum())
    Wm = V[:, keep] / np.sqrt(mu[keep])
    C = Wm.T @ A @ Wm
    C = 0.5 * (C + C.T)
    dense = float(np.linalg.eigvalsh(C)[-1])
    # power iteration on C + shift (shift keeps the spectrum positive)
    rng = np.random.default_rng(12345)
    x = rng.normal(size=C.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    shift = 0.0
    res = np.inf
    for it in range(max_iter):
        y = C @ x + shift * x
        x_new = y / np.linalg.norm(y)
        lam = float(x_new @ C @ x_new)
        res = float(np.linalg.norm(C @ x_new - lam * x_new)) / max(abs(lam), 1.0)
        x = x_new
        if res < 1e-9:
            break
    # power iteration stalls on clustered tops; accept the dense value and keep the residual
    vec = Wm @ x * s
    return {"lambda_max": dense, "power_lambda": lam, "power_residual": res, "deflated": deflated,
            "vector": vec, "iterations": it + 1}


@dataclass
class QuotientRecord:
    h: float
    lambda_max: float
    basis_dim: int
    K: int
    residual: float
    deflated: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def korn_quotient(shell: ShellModel, K: int, degree: int = 2, surf_nodes: Optional[int] = None) -> QuotientRecord:
    """Largest ``||grad y||^2 / ||sym grad y||^2`` over the ``3 K^2 (degree + 1)`` dimensional basis."""
    A, B, basis = korn_gram(shell, K, degree, surf_nodes)
    ev = max_generalized_eigenvalue(A, B)
    return QuotientRecord(shell.h, ev["lambda_max"], basis.dim, K, ev["power_residual"], ev["deflated"])


def saturated_quotient(shell: ShellModel, K_schedule: Sequence[int], degree: int = 2, rel: float = 0.02):
    """Run ``korn_quotient`` along the schedule until ``lambda_max`` changes by less than ``rel``."""
    history = []
    prev = None
    for K in K_schedule:
        rec = korn_quotient(shell, K, degree)
        history.append(rec)
        if prev is not None and abs(rec.lambda_max - prev.lambda_max) <= rel * prev.lambda_max:
            return rec, history
        prev = rec
    raise SaturationError(f"lambda_max not saturated for h={shell.h} within K schedule {list(K_schedule)}",
                          {"h": shell.h, "history": [r.to_dict() for r in history]})


@dataclass
class ScalingFit:
    slope: float
    stderr: float
    intercept: float
    n: int
    local_slopes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def fit_scaling(records: Sequence, require_saturation: bool = True) -> ScalingFit:
    """Least-squares slope of ``log lambda_max`` against ``log h``.

    ``records`` are QuotientRecords or ``(h, lambda)`` pairs.  Records may
    carry a ``saturated`` attribute; unsaturated ones are refused.
    """
    hs, ls = [], []
    for r in records:
        if isinstance(r, QuotientRecord):
            if require_saturation and getattr(r, "saturated", True) is False:
                raise SaturationError(f"record at h={r.h} is not saturated")
            hs.append(r.h)
            ls.append(r.lambda_max)
        else:
            hs.append(float(r[0]))
            ls.append(float(r[1]))
    if len(hs) < 4:
        raise RigidityError("scaling fit needs at least 4 records")
    hs, ls = np.asarray(hs), np.asarray(ls)
    if hs.max() < 2.0 * hs.min() * (1 - 1e-12):
        raise RigidityError("thickness values must span at least one octave")
    x, y = np.log(hs), np.log(ls)
    Amat = np.stack([x, np.ones_like(x)], axis=-1)
    coef, *_ = np.linalg.lstsq(Amat, y, rcond=None)
    resid = y - Amat @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(Amat.T @ Amat)
    order = np.argsort(hs)[::-1]
    local = [float((y[order[i + 1]] - y[order[i]]) / (x[order[i + 1]] - x[order[i]]))
             for i in range(len(order) - 1)]
    return ScalingFit(float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0))), float(coef[1]), len(x), local)


def write_records_csv(records: Sequence[QuotientRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "log_h", "lambda_max", "log_lambda", "basis_dim", "K", "residual"])
        for r in records:
            w.writerow([repr(r.h), repr(float(np.log(r.h))), repr(r.lambda_max), repr(float(np.log(r.lambda_max))),
                        r.basis_dim, r.K, repr(r.residual)])


def write_records_json(records: Sequence[QuotientRecord], fit: Optional[ScalingFit], path) -> None:
    out = {"records": [r.to_dict() for r in records], "fit": None if fit is None else fit.to_dict()}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# pointwise identities


def divergence_identity_grid(x1: np.ndarray, x2: np.ndarray, g: np.ndarray, Gamma: np.ndarray, Pi: np.ndarray,
                             W: np.ndarray, w: np.ndarray) -> dict:
    """Both sides of ``div_g[w i(W) Pi] = Pi(W, Dw) + w tr_g i(W) D Pi + w <Pi, DW>`` on a grid.

    ``W`` holds covariant components, ``Gamma[..., k, i, j] = Gamma^k_ij``.
    Derivatives are second-order differences (one-sided at the edges).
    """
    h = (float(x1[1] - x1[0]), float(x2[1] - x2[0]))

    def d(F, axis):
        return np.gradient(F, h[axis], axis=axis, edge_order=2)

    gi = inverse_metric(g)
    Wup = np.einsum("...ab,...b->...a", gi, W)
    V = w[..., None] * np.einsum("...a,...ab->...b", Wup, Pi)
    dV = np.stack([d(V, 0), d(V, 1)], axis=-2)                     # [..., c, b] = d_c V_b
    lhs = np.einsum("...bc,...cb->...", gi, dV - np.einsum("...acb,...a->...cb", Gamma, V))

    dw = np.stack([d(w, 0), d(w, 1)], axis=-1)
    t1 = np.einsum("...a,...ab,...bc,...c->...", Wup, Pi, gi, dw)
    dPi = np.stack([d(Pi, 0), d(Pi, 1)], axis=-3)                  # [..., c, a, b]
    nabPi = (dPi - np.einsum("...dca,...db->...cab", Gamma, Pi)
             - np.einsum("...dcb,...ad->...cab", Gamma, Pi))
    t2 = w * np.einsum("...bc,...cab,...a->...", gi, nabPi, Wup)
    dW = np.stack([d(W, 0), d(W, 1)], axis=-2)                     # [..., c, d] = d_c W_d
    DW = dW - np.einsum("...ecd,...e->...cd", Gamma, W)
    t3 = w * np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, Pi, DW)
    rhs = t1 + t2 + t3

    # divergence theorem in coordinates: int d_c(sqrt(g) V^c) du = boundary flux
    sg = np.sqrt(np.linalg.det(g))
    Vup = np.einsum("...cb,...b->...c", gi, V) * sg[..., None]
    area = trapezoid(trapezoid(lhs * sg, dx=h[1], axis=1), dx=h[0])
    flux = (trapezoid(Vup[-1, :, 0] - Vup[0, :, 0], dx=h[1])
            + trapezoid(Vup[:, -1, 1] - Vup[:, 0, 1], dx=h[0]))
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), 1e-300)
    return {"lhs": lhs, "rhs": rhs,
            "max_residual": float(np.max(np.abs(lhs - rhs)[1:-1, 1:-1])) if lhs.shape[0] > 2 else 0.0,
            "scale": scale,
            "integrated_residual": float(area - flux),
            "step": max(abs(h[0]), abs(h[1]))}


def divergence_identity_check(disp) -> dict:
    """Identity check for a displacement on an asymptotic chart (``Pi = [[0, omega], [omega, 0]]``)."""
    ch = disp.chart
    if not np.all(disp.mask):
        raise RigidityError("the identity check needs the displacement on the full chart grid")
    Pi = np.zeros(ch.shape + (2, 2))
    Pi[..., 0, 1] = Pi[..., 1, 0] = ch.omega
    W = np.stack([disp.W1, disp.W2], axis=-1)
    return divergence_identity_grid(ch.x1, ch.x2, ch.g, ch.Gamma, Pi, W, disp.w)


def divergence_identity_surface(surface: SurfaceChart, box, W_up: Callable, w: Callable, n: int = 65) -> dict:
    """Identity check in surface parameters over ``box``; ``W_up(u)`` is contravariant."""
    (a1, b1), (a2, b2) = box
    x1, x2 = np.linspace(a1, b1, n), np.linspace(a2, b2, n)
    U = np.stack(np.meshgrid(x1, x2, indexing="ij"), -1)
    G = metric(surface, U)
    Wc = np.einsum("...ab,...b->...a", G, np.asarray(W_up(U), dtype=float))
    return divergence_identity_grid(x1, x2, G, christoffels(surface, U), second_form(surface, U), Wc,
                                    np.asarray(w(U), dtype=float))


def _fd(f, x, step, axis_count):
    """Central differences of ``f`` at ``x`` along each of its last-axis coordinates."""
    cols = []
    for a in range(axis_count):
        e = np.zeros(axis_count)
        e[a] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    return np.stack(cols, axis=-1)


def lemma51_identity_check(disp: ShellDisplacement3D, u, t: float, delta: float = 1e-4,
                           surface_step: float = 1e-5) -> dict:
    """Gradient decomposition of a shell displacement at ``(u, t)``.

    Left sides: ``|grad y + t p(y)|^2`` and its symmetric part, with ``grad y``
    from central differences of ``y`` and of the shell map ``r + t n`` in
    ``(u1, u2, t)`` at step ``delta``.  Right sides: ``|DW + w Pi|^2 +
    |Dw - i(W)Pi|^2 + |W_t|^2 + w_t^2`` and ``|Upsilon|^2 + |X|^2/2 + w_t^2``
    from intrinsic surface quantities.
    """
    S = disp.surface
    u = np.asarray(u, dtype=float)
    kmax = principal_bound(S, u[None])
    if abs(t) * kmax >= 1.0:
        raise InvalidShellError("|t| times a principal curvature reaches 1: shell map not injective")

    def Y(x):
        return disp(x[..., :2], x[..., 2])

    def Phi(x):
        return S.point(x[..., :2]) + x[..., 2:3] * normal(S, x[..., :2])

    x = np.array([u[0], u[1], t])
    Jy = _fd(Y, x, delta, 3)
    Jp = _fd(Phi, x, delta, 3)
    M = Jy @ np.linalg.inv(Jp)
    dn = _fd(lambda v: normal(S, v), u, delta, 2)                 # columns n_a
    T = S.tangents(u)
    nn = normal(S, u)
    Bm = np.column_stack([T, nn])
    Sop = np.column_stack([dn, np.zeros(3)]) @ np.linalg.inv(Bm)
    Kmat = M @ (np.eye(3) + t * Sop)
    lhs3 = float(np.sum(Kmat * Kmat))
    Ks = 0.5 * (Kmat + Kmat.T)
    lhs4 = float(np.sum(Ks * Ks))

    # intrinsic side
    G = metric(S, u)
    gi = inverse_metric(G)
    Pi = second_form(S, u)
    Gam = christoffels(S, u)
    a = lambda v: np.asarray(disp.a(v, t), dtype=float)          # noqa: E731
    b = lambda v: np.asarray(disp.b(v, t), dtype=float)          # noqa: E731
    Wcov = lambda v: np.einsum("...ab,...b->...a", metric(S, v), a(v))  # noqa: E731
    dWc = _fd(Wcov, u, surface_step, 2).T                          # [c, d] = d_c W_d
    Wc = Wcov(u)
    Wup = a(u)
    w = float(b(u))
    DW = dWc - np.einsum("ecd,e->cd", Gam, Wc)
    dw = _fd(b, u, surface_step, 2)
    st = surface_step
    Wt_up = (np.asarray(disp.a(u, t + st)) - np.asarray(disp.a(u, t - st))) / (2 * st)
    wt = float((np.asarray(disp.b(u, t + st)) - np.asarray(disp.b(u, t - st))) / (2 * st))
    Wt_cov = G @ Wt_up

    def n2(Tm):
        return float(np.einsum("ac,bd,ab,cd->", gi, gi, Tm, Tm))

    def n1(v):
        return float(v @ gi @ v)

    X0 = dw - Pi @ Wup
    Ups = 0.5 * (DW + DW.T) + w * Pi
    Xy = X0 + Wt_cov
    rhs3 = n2(DW + w * Pi) + n1(X0) + n1(Wt_cov) + wt * wt
    rhs4 = n2(Ups) + 0.5 * n1(Xy) + wt * wt
    rel = lambda l, r: abs(l - r) / max(abs(l), abs(r), 1e-300)  # noqa: E731
    return {"lhs_full": lhs3, "rhs_full": rhs3, "rel_full": rel(lhs3, rhs3),
            "lhs_sym": lhs4, "rhs_sym": rhs4, "rel_sym": rel(lhs4, rhs4), "t": t, "delta": delta}


def random_shell_displacement(surface: SurfaceChart, rng: np.random.Generator, terms: int = 3,
                              max_freq: float = 2.0, t_scale: float = 5.0) -> ShellDisplacement3D:
    """Smooth ``(a, b)`` built from a few random plane waves in ``(u, t)``."""
    ka = rng.uniform(-max_freq, max_freq, size=(2, terms, 2))
    kt = rng.uniform(-t_scale, t_scale, size=(3, terms))
    ph = rng.uniform(0, 2 * np.pi, size=(3, terms))
    amp = rng.normal(size=(3, terms))
    kb = rng.uniform(-max_freq, max_freq, size=(terms, 2))

    def wave(c, K, u, t):
        arg = np.asarray(u) @ K.T + np.asarray(t)[..., None] * kt[c] + ph[c]
        return np.sin(arg) @ amp[c]

    def a(u, t):
        return np.stack([wave(0, ka[0], u, t), wave(1, ka[1], u, t)], axis=-1)

    def b(u, t):
        return wave(2, kb, u, t)

    return ShellDisplacement3D(surface, a, b)


# ---------------------------------------------------------------------------
# estimate probes


def _box_grid(box, n):
    (a1, b1), (a2, b2) = box
    x1, x2 = np.linspace(a1, b1, n), np.linspace(a2, b2, n)
    return x1, x2, np.stack(np.meshgrid(x1, x2, indexing="ij"), -1)


def _trap2(F, x1, x2) -> float:
    return float(trapezoid(trapezoid(F, x2, axis=1), x1))


def surface_fields(surface: SurfaceChart, box, W_up: Callable, w: Callable, n: int) -> dict:
    """Grid norms entering the rigidity estimates for ``y = W + w n`` over a parameter box.

    The strain uses second-order differences of the covariant components.
    Boundary traces are measured with the parameter of each edge.
    """
    x1, x2, U = _box_grid(box, n)
    G = metric(surface, U)
    gi = inverse_metric(G)
    Gam = christoffels(surface, U)
    Pi = second_form(surface, U)
    Wu = np.asarray(W_up(U), dtype=float)
    Wc = np.einsum("...ab,...b->...a", G, Wu)
    wv = np.asarray(w(U), dtype=float)
    h = (x1[1] - x1[0], x2[1] - x2[0])
    dWc = np.stack([np.gradient(Wc, h[0], axis=0, edge_order=2), np.gradient(Wc, h[1], axis=1, edge_order=2)],
                   axis=-2)
    DW = dWc - np.einsum("...ecd,...e->...cd", Gam, Wc)
    Ups = 0.5 * (DW + np.swapaxes(DW, -1, -2)) + wv[..., None, None] * Pi
    dw = np.stack([np.gradient(wv, h[0], axis=0, edge_order=2), np.gradient(wv, h[1], axis=1, edge_order=2)],
                  axis=-1)
    sg = np.sqrt(np.linalg.det(G))
    ups2 = np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, Ups, Ups)
    W2 = np.einsum("...a,...ab,...b->...", Wu, G, Wu)
    dw2 = np.einsum("...a,...ab,...b->...", dw, gi, dw)
    return {
        "W": _trap2(W2 * sg, x1, x2),
        "w": _trap2(wv ** 2 * sg, x1, x2),
        "Dw": _trap2(dw2 * sg, x1, x2),
        "Upsilon": _trap2(ups2 * sg, x1, x2),
        "bottom": float(trapezoid(W2[:, 0], x1)),
        "left": float(trapezoid(W2[0, :], x2)),
        "right": float(trapezoid(W2[-1, :], x2)),
    }


@dataclass
class EstimateReport:
    kind: str
    ratios: list
    constant: float
    violations: int
    guarded: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(lhs: float, rhs: float, floor: float = 1e-10):
    if rhs <= floor:
        if lhs <= floor:
            return None
        return np.inf
    return lhs / rhs


def rigidity_estimate_probe(surface: SurfaceChart, box, fields: Sequence, n: int = 65, kind: str = "W",
                            sides: str = "three", constant: Optional[float] = None) -> EstimateReport:
    """Empirical constants of the rigidity estimates over a set of ``(W_up, w)`` fields.

    ``kind="W"``: ``||W||^2 <= C (||Upsilon||^2 + boundary traces)``, the
    traces being the bottom edge and, with ``sides="three"``, the left and
    right edges.  ``kind="w"``: ``||w||^2 <= C (||Dw|| ||Upsilon|| +
    ||Upsilon||^2)`` for fields vanishing on the boundary.  With ``constant``
    given, fields whose ratio exceeds it are counted as violations.
    """
    ratios, guarded, viol = [], 0, 0
    for W_up, w in fields:
        q = surface_fields(surface, box, W_up, w, n)
        if kind == "W":
            lhs = q["W"]
            rhs = q["Upsilon"] + q["bottom"] + (q["left"] + q["right"] if sides == "three" else 0.0)
        elif kind == "w":
            lhs = q["w"]
            rhs = np.sqrt(q["Dw"] * q["Upsilon"]) + q["Upsilon"]
        else:
            raise ValueError(f"unknown estimate kind {kind!r}")
        r = _ratio(lhs, rhs)
        if r is None:
            guarded += 1
            continue
        if not np.isfinite(r):
            viol += 1
        elif constant is not None and r > constant:
            viol += 1
        ratios.append(float(r))
    C = float(max((r for r in ratios if np.isfinite(r)), default=0.0))
    return EstimateReport(kind, ratios, C, viol, guarded)


def random_probe_fields(rng: np.random.Generator, box, count: int, clamp: bool = False, terms: int = 3,
                        max_freq: float = 3.0) -> list:
    """Random smooth ``(W_up, w)`` pairs; with ``clamp`` the tangential part vanishes on three sides
    (all but the top) and ``w`` on the whole boundary."""
    (a1, b1), (a2, b2) = box
    out = []
    for _ in range(count):
        K = rng.uniform(-max_freq, max_freq, size=(3, terms, 2))
        ph = rng.uniform(0, 2 * np.pi, size=(3, terms))
        amp = rng.normal(size=(3, terms))

        def make(K=K, ph=ph, amp=amp):
            def wave(c, u):
                return np.sin(u @ K[c].T + ph[c]) @ amp[c]

            def cut3(u):
                x = (u[..., 0] - a1) / (b1 - a1)
                y = (u[..., 1] - a2) / (b2 - a2)
                return x * (1 - x) * y

            def cut4(u):
                return cut3(u) * (1 - (u[..., 1] - a2) / (b2 - a2))

            def W_up(u):
                v = np.stack([wave(0, u), wave(1, u)], axis=-1)
                return v * cut3(u)[..., None] if clamp else v

            def w(u):
                return wave(2, u) * cut4(u) if clamp else wave(2, u)

            return W_up, w

        out.append(make())
    return out
