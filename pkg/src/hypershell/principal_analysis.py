"""Principal curvatures and principal directions on the monkey saddle.

Closed-form quantities for the graph ``h = x1^3 - 3 x1 x2^2`` together with
the limit computations showing that a continuous unit principal field
cannot exist across the ``x1``-axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PrincipalAnalysisError",
    "NearSingularError",
    "saddle_metric",
    "saddle_sigma",
    "principal_curvatures",
    "lambda1_on_axis",
    "eta",
    "eta_unsimplified",
    "zeta_components",
    "x2_eta_limit_closed_form",
    "richardson_limit",
    "PrincipalField",
    "principal_field",
    "ObstructionReport",
    "principal_obstruction_report",
]

DEFAULT_X2_LADDER = (1e-2, 1e-3, 1e-4)


class PrincipalAnalysisError(ArithmeticError):
    pass


class NearSingularError(PrincipalAnalysisError):
    pass


def _xy(u):
    u = np.asarray(u, dtype=float)
    return u[..., 0], u[..., 1]


def saddle_sigma(u):
    x1, x2 = _xy(u)
    r2 = x1 * x1 + x2 * x2
    return 6.0 / np.sqrt(1.0 + 9.0 * r2 * r2)


def saddle_metric(u):
    """``(g11, g12, g22)`` of the monkey saddle graph."""
    x1, x2 = _xy(u)
    d = x1 * x1 - x2 * x2
    g11 = 1.0 + 9.0 * d * d
    g12 = -18.0 * x1 * x2 * d
    g22 = 1.0 + 36.0 * x1 * x1 * x2 * x2
    return g11, g12, g22


def principal_curvatures(u):
    """Roots ``lambda1 > lambda2`` of ``(l g11 + s x1)(l g22 - s x1) = (l g12 - s x2)^2``."""
    x1, x2 = _xy(u)
    if np.any((x1 == 0) & (x2 == 0)):
        raise PrincipalAnalysisError("the origin is a flat point")
    g11, g12, g22 = saddle_metric(u)
    s = saddle_sigma(u)
    a = g11 * g22 - g12 * g12
    b = s * (x1 * (g22 - g11) + 2.0 * g12 * x2)
    c = -s * s * (x1 * x1 + x2 * x2)
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0):
        raise PrincipalAnalysisError("negative discriminant")
    q = -0.5 * (b + np.where(b >= 0, 1.0, -1.0) * np.sqrt(disc))
    r1, r2 = q / a, c / q
    return np.maximum(r1, r2), np.minimum(r1, r2)


def lambda1_on_axis(x1):
    """Closed form of the positive principal curvature on ``x2 = 0``."""
    x1 = np.asarray(x1, dtype=float)
    s = 6.0 / np.sqrt(1.0 + 9.0 * x1**4)
    return np.where(x1 > 0, s * x1, -s * x1 / (1.0 + 9.0 * x1**4))


def _check_off_axis(x2):
    if np.any(np.asarray(x2) == 0):
        raise PrincipalAnalysisError("eta is only defined off the x1-axis")


def eta(u, lam=None):
    """Ratio ``zeta1 / zeta2`` of the principal direction for ``lambda1`` (simplified form)."""
    x1, x2 = _xy(u)
    _check_off_axis(x2)
    g11, g12, g22 = saddle_metric(u)
    s = saddle_sigma(u)
    if lam is None:
        lam = principal_curvatures(u)[0]
    den = s * (g11 * x2 + g12 * x1)
    if np.any(np.abs(den) < 1e-14):
        raise NearSingularError("denominator of eta below 1e-14")
    return (lam * (g11 * g22 - g12 * g12) + s * (g12 * x2 - g11 * x1)) / den


def eta_unsimplified(u, lam=None):
    """Same ratio read off the second eigen-equation before using the characteristic polynomial."""
    x1, x2 = _xy(u)
    _check_off_axis(x2)
    g11, g12, g22 = saddle_metric(u)
    s = saddle_sigma(u)
    if lam is None:
        lam = principal_curvatures(u)[0]
    den = lam * (g11 * x2 + g12 * x1)
    if np.any(np.abs(den) < 1e-14):
        raise NearSingularError("denominator of eta below 1e-14")
    return (s * (x1 * x1 + x2 * x2) - lam * (g12 * x2 + g22 * x1)) / den


def zeta_components(u, sign: int = 1):
    """Unit principal direction ``(zeta1, zeta2)`` for ``lambda1`` with the chosen branch sign."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    g11, g12, g22 = saddle_metric(u)
    e = eta(u)
    z2 = sign / np.sqrt(e * e * g11 + 2.0 * e * g12 + g22)
    return e * z2, z2


def x2_eta_limit_closed_form(x1):
    x1 = np.asarray(x1, dtype=float)
    return -x1 * (2.0 + 9.0 * x1**4) / (1.0 - 9.0 * x1**4)


def richardson_limit(hs, values) -> float:
    """Extrapolate ``values(h)`` to ``h = 0`` with the interpolating polynomial in ``h``."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    # Neville's scheme evaluated at zero
    p = values.copy()
    n = len(hs)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (hs[i + k] * p[i] - hs[i] * p[i + 1]) / (hs[i + k] - hs[i])
    return float(p[0])


@dataclass
class PrincipalField:
    x1: np.ndarray
    x2: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    sign: int

    def unit_residual(self) -> float:
        g11, g12, g22 = saddle_metric(np.stack([self.x1, self.x2], axis=-1))
        n2 = self.zeta1**2 * g11 + 2 * self.zeta1 * self.zeta2 * g12 + self.zeta2**2 * g22
        return float(np.max(np.abs(n2 - 1.0)))


def principal_field(x1s, x2s, sign: int = 1) -> PrincipalField:
    X1, X2 = np.meshgrid(np.asarray(x1s, float), np.asarray(x2s, float), indexing="ij")
    u = np.stack([X1, X2], axis=-1)
    l1, l2 = principal_curvatures(u)
    z1, z2 = zeta_components(u, sign)
    return PrincipalField(X1, X2, l1, l2, z1, z2, sign)


@dataclass
class ObstructionReport:
    x1_minus: float
    x1_plus: float
    x2_ladder: tuple
    zeta1_limit_above: float
    zeta1_limit_below: float
    zeta2_limit_above: float
    zeta2_limit_below: float
    branch_jumps: dict = field(default_factory=dict)

    @property
    def zeta1_jump(self) -> float:
        return abs(self.zeta1_limit_above - self.zeta1_limit_below)

    @property
    def zeta2_jump(self) -> float:
        return abs(self.zeta2_limit_above - self.zeta2_limit_below)

    @property
    def obstruction_holds(self) -> bool:
        """Every branch assignment leaves a jump in at least one component."""
        return all(max(j) > 1e-3 for j in self.branch_jumps.values())

    def to_dict(self) -> dict:
        return {
            "x1_minus": self.x1_minus,
            "x1_plus": self.x1_plus,
            "x2_ladder": list(self.x2_ladder),
            "zeta1_limit_above": self.zeta1_limit_above,
            "zeta1_limit_below": self.zeta1_limit_below,
            "zeta1_jump": self.zeta1_jump,
            "zeta2_limit_above": self.zeta2_limit_above,
            "zeta2_limit_below": self.zeta2_limit_below,
            "zeta2_jump": self.zeta2_jump,
            "branch_jumps": {k: list(v) for k, v in self.branch_jumps.items()},
            "obstruction_holds": self.obstruction_holds,
        }


def _one_sided(x1: float, side: int, which: int, ladder) -> float:
    vals = [zeta_components(np.array([x1, side * h]), 1)[which] for h in ladder]
    return richardson_limit(ladder, vals)


def principal_obstruction_report(x1_minus: float = -1.0, x1_plus: float = 1.0,
                                 x2_ladder=DEFAULT_X2_LADDER) -> ObstructionReport:
    """One-sided limits of the ``+`` branch across ``x2 = 0`` and the jump table.

    ``zeta1`` is examined at ``x1_minus`` and ``zeta2`` at ``x1_plus``.  For
    each assignment of branch signs above/below the axis the report lists
    the resulting ``(zeta1 jump, zeta2 jump)``.
    """
    if not x1_minus < -1.0 / np.sqrt(3.0):
        raise ValueError("x1_minus must lie below -1/sqrt(3)")
    if not x1_plus > 1.0 / np.sqrt(3.0):
        raise ValueError("x1_plus must exceed 1/sqrt(3)")
    z1a = _one_sided(x1_minus, +1, 0, x2_ladder)
    z1b = _one_sided(x1_minus, -1, 0, x2_ladder)
    z2a = _one_sided(x1_plus, +1, 1, x2_ladder)
    z2b = _one_sided(x1_plus, -1, 1, x2_ladder)
    jumps = {}
    for sa in (1, -1):
        for sb in (1, -1):
            key = f"{'+' if sa > 0 else '-'}{'+' if sb > 0 else '-'}"
            jumps[key] = (abs(sa * z1a - sb * z1b), abs(sa * z2a - sb * z2b))
    return ObstructionReport(float(x1_minus), float(x1_plus), tuple(x2_ladder),
                             z1a, z1b, z2a, z2b, jumps)
