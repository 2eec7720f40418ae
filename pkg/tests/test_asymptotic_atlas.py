import json
import time

import numpy as np
import pytest
from conftest import line_anchor

from hypershell.asymptotic_atlas import (
    AtlasError,
    ChartExtentError,
    NotTransversalError,
    branch_formula,
    build_chart,
    pullback_tensor,
    rho_Q_shape,
    transversal_normal_form,
)
from hypershell.surface_geometry import (
    CharacteristicVectorError,
    NotHyperbolicError,
    SurfaceError,
    gauss_curvature,
    metric,
    second_form,
)

CHARTS = ["paraboloid_chart", "saddle_chart"]


@pytest.fixture
def chart(request):
    return request.getfixturevalue(request.param)


@pytest.mark.parametrize("chart", CHARTS, indirect=True)
class TestChartInvariants:
    def test_pi_diagonal_vanishes(self, chart):
        assert chart.pi_residual()[chart.interior()].max() <= 1e-6

    def test_gauss_identity(self, chart):
        assert chart.gauss_identity_residual()[chart.interior()].max() <= 1e-6

    def test_omega_nonzero(self, chart):
        assert np.all(np.abs(chart.omega) > 0)
        assert np.all(-chart.kappa * chart.det_g > 0)

    def test_anchor_normal_form(self, chart):
        n = chart.shape[0]
        t = np.linspace(*chart.anchor.t_range, n)
        assert np.max(np.abs(chart.u[np.arange(n), n - 1 - np.arange(n)] - chart.anchor(t))) < 1e-10
        x = chart.psi(chart.anchor(t))
        assert np.max(np.abs(x - np.stack([t, -t], -1))) < 1e-8

    def test_jacobian_one_sign(self, chart):
        d = chart.jacobian_det()
        assert np.all(d > 0) or np.all(d < 0)

    def test_metric_compatibility(self, chart):
        assert chart.metric_compatibility_residual()[chart.interior(2)].max() <= 1e-6

    def test_mixed_partials_commute(self, chart):
        h1, h2 = chart.steps
        u = chart.u
        d1 = np.gradient(u, h1, axis=0)
        d12 = np.gradient(d1, h2, axis=1)
        d21 = np.gradient(np.gradient(u, h2, axis=1), h1, axis=0)
        assert np.max(np.abs(d12 - d21)[1:-1, 1:-1]) <= 10 * max(h1, h2)

    def test_psi_round_trip(self, chart):
        rng = np.random.default_rng(3)
        x = np.stack([rng.uniform(chart.x1[1], chart.x1[-2], 50), rng.uniform(chart.x2[1], chart.x2[-2], 50)], -1)
        assert np.max(np.abs(chart.psi(chart.psi_inv(x)) - x)) < 1e-9

    def test_pullback_pi(self, chart):
        T11, T12, T22 = pullback_tensor(chart, lambda u: second_form(chart.surface, u))
        scale = np.abs(chart.omega)
        assert np.max(np.abs(T11) / scale) < 1e-10 and np.max(np.abs(T22) / scale) < 1e-10
        assert np.allclose(T12, chart.omega, rtol=1e-10)

    def test_pullback_metric(self, chart):
        T11, T12, T22 = pullback_tensor(chart, lambda u: metric(chart.surface, u))
        assert np.allclose(T11, chart.g[..., 0, 0], atol=1e-10)
        assert np.allclose(T12, chart.g[..., 0, 1], atol=1e-10)
        assert np.allclose(T22, chart.g[..., 1, 1], atol=1e-10)

    def test_branch_formula(self, chart):
        rng = np.random.default_rng(11)
        n1, n2 = chart.shape
        gd, bd = np.array([1.0, -1.0]), np.array([1.0, 1.0])
        for _ in range(100):
            i, j = rng.integers(1, n1 - 1), rng.integers(1, n2 - 1)
            X = rng.normal(size=2)
            a = rho_Q_shape(chart, i, j, X)
            b = branch_formula(chart, gd, bd, i, j, X)
            assert np.max(np.abs(a - b)) <= 1e-8 * (1 + np.linalg.norm(X))

    def test_swap_is_involution(self, chart):
        s = chart.swap()
        assert np.allclose(s.pi_residual(), chart.swap().pi_residual())
        back = s.swap()
        assert np.allclose(back.u, chart.u) and np.allclose(back.g, chart.g) and np.allclose(back.Gamma, chart.Gamma)
        assert np.allclose(back.x1, chart.x1)


def test_paraboloid_coordinate_lines(paraboloid_chart):
    # asymptotic lines of z = uv are the u and v coordinate lines
    J = paraboloid_chart.J
    col_small = np.minimum(np.abs(J[..., 0, :]), np.abs(J[..., 1, :]))
    assert np.max(col_small) < 1e-8
    assert np.max(paraboloid_chart.pi_residual()) <= 1e-8


def test_paraboloid_pullback_of_kappa_metric(paraboloid, paraboloid_anchor):
    chart = build_chart(paraboloid, paraboloid_anchor, n=33)
    c = chart.shape[0] // 2
    assert np.allclose(chart.u[c, c], 0.0, atol=1e-12)
    T = pullback_tensor(chart, lambda u: gauss_curvature(paraboloid, u)[..., None, None] * metric(paraboloid, u))
    assert T[0][c, c] == pytest.approx(-chart.g[c, c, 0, 0], abs=1e-12)
    assert T[1][c, c] == pytest.approx(-chart.g[c, c, 0, 1], abs=1e-12)


def test_ode_order(saddle, saddle_anchor):
    us = [build_chart(saddle, saddle_anchor, n=17, ode_steps=k).u for k in (16, 32, 64, 128)]
    d = [np.max(np.abs(us[k] - us[-1])) for k in range(3)]
    # fourth order: halving the step divides the error by about 16
    assert d[0] / d[1] > 10 and d[1] / d[2] > 10


@pytest.mark.parametrize("name", ["paraboloid", "saddle"])
def test_build_time_at_129(request, name):
    S = request.getfixturevalue(name)
    A = request.getfixturevalue(name + "_anchor")
    t = time.perf_counter()
    chart = build_chart(S, A, n=129)
    assert time.perf_counter() - t < 30
    assert chart.pi_residual()[chart.interior()].max() <= 1e-6


class TestErrors:
    def test_characteristic_anchor(self, saddle):
        with pytest.raises(CharacteristicVectorError):
            build_chart(saddle, line_anchor((1.0, 0.0), (1.0, 1.0), (-0.1, 0.1)), n=17)

    def test_anchor_through_flat_point(self, saddle):
        with pytest.raises(NotHyperbolicError):
            build_chart(saddle, line_anchor((0.0, 0.0), (1.0, -0.3), (-0.2, 0.2)), n=17)

    def test_extent_too_large(self, saddle):
        with pytest.raises(ChartExtentError):
            build_chart(saddle, line_anchor((1.0, -1.0), (1.0, -1.0), (-1.5, 1.5)), n=33)

    def test_error_hierarchy(self):
        assert issubclass(ChartExtentError, AtlasError) and issubclass(AtlasError, SurfaceError)

    def test_tiny_grid(self, paraboloid, paraboloid_anchor):
        with pytest.raises(AtlasError):
            build_chart(paraboloid, paraboloid_anchor, n=3)


class TestTransversal:
    def test_increasing_curve(self, paraboloid_chart):
        beta = line_anchor((0.0, 0.0), (1.0, 1.0), (0.0, 0.3))
        tc = transversal_normal_form(paraboloid_chart, beta)
        assert not tc.swapped
        assert np.all(tc.derivative > 0)
        assert np.allclose(tc.coords[0], 0.0, atol=1e-9)

    def test_reversed_curve_needs_swap(self, paraboloid_chart):
        beta = line_anchor((0.0, 0.0), (-1.0, -1.0), (0.0, 0.3))
        tc = transversal_normal_form(paraboloid_chart, beta)
        assert tc.swapped and np.all(tc.derivative > 0)
        # the anchor keeps its normal form in the reflected chart
        sw = tc.chart
        n = sw.shape[0]
        t = np.linspace(*sw.anchor.t_range, n)
        assert np.max(np.abs(sw.psi(sw.anchor(t)) - np.stack([t, -t], -1))) < 1e-8
        assert sw.pi_residual()[sw.interior()].max() <= 1e-6

    def test_coordinate_line_rejected(self, paraboloid_chart):
        with pytest.raises(NotTransversalError):
            transversal_normal_form(paraboloid_chart, line_anchor((0.0, 0.0), (1.0, 0.0), (0.0, 0.3)))


def test_dump(tmp_path, saddle_chart):
    head, binf = saddle_chart.dump(str(tmp_path / "chart"))
    meta = json.loads(open(head).read())
    n1, n2 = meta["x1"][2], meta["x2"][2]
    data = np.fromfile(binf, dtype="<f8").reshape(len(meta["fields"]), n1, n2)
    assert np.array_equal(data[0], saddle_chart.u[..., 0])
    assert np.array_equal(data[-1], saddle_chart.omega)
