import numpy as np
import pytest

from hypershell.characteristic_solver import (
    BoundaryData,
    CharSystem,
    ContractionFailure,
    CurveLocus,
    Diagonal,
    EmptyTraceError,
    GridPairField,
    HorizontalLine,
    Segment,
    SolverError,
    UnsolvableInstanceError,
    VerticalLine,
    extract_trace,
    picard_apply,
    read_binary,
    solve_primitive,
    solve_region,
    xi_minus_data,
)
from hypershell.planar_regions import PlanarCurve, make_region, subdivide_E

EXP = CharSystem(a11=1.0)


def unit_square():
    return make_region("R", z=(0, 0), a=1, b=1)


def diag_down():
    return PlanarCurve.segment((0.0, 0.0), (1.0, -1.0))


def exp_error(n):
    f = solve_region(unit_square(), EXP, BoundaryData.for_R(1.0, 0.0), grid=n)
    X, _ = np.meshgrid(f.x1, f.x2, indexing="ij")
    return f, f.f1 - np.exp(X)


# coupled constant-coefficient system with a closed-form solution
A = dict(a11=0.5, a12=1.0, a21=-1.0, a22=0.3)


def mf_f(x1, x2):
    return np.cos(x1) + x2 / 4, np.sin(x2) * np.exp(-x1 / 4)


def mf_system():
    def p1(x1, x2):
        f1, f2 = mf_f(x1, x2)
        return -np.sin(x1) - A["a11"] * f1 - A["a12"] * f2

    def p2(x1, x2):
        f1, f2 = mf_f(x1, x2)
        return np.cos(x2) * np.exp(-x1 / 4) - A["a21"] * f1 - A["a22"] * f2

    return CharSystem(p1=p1, p2=p2, **A)


def mf_R_data(z):
    return BoundaryData.for_R(lambda y: mf_f(z[0], y)[0], lambda x: mf_f(x, z[1])[1])


def mf_error(f):
    X, Y = np.meshgrid(f.x1, f.x2, indexing="ij")
    e1, e2 = mf_f(X, Y)
    return max(np.nanmax(np.abs(f.f1 - e1)), np.nanmax(np.abs(f.f2 - e2)))


class TestPrimitive:
    def test_decoupled_transport(self):
        f = solve_region(unit_square(), CharSystem(), BoundaryData.for_R(lambda y: y, lambda x: x), grid=33)
        X, Y = np.meshgrid(f.x1, f.x2, indexing="ij")
        assert np.max(np.abs(f.f1 - Y)) < 1e-14 and np.max(np.abs(f.f2 - X)) < 1e-14

    def test_exponential(self):
        _, e = exp_error(129)
        assert np.max(np.abs(e)) <= 1e-4

    def test_convergence_order(self):
        ns = (33, 65, 129, 257)
        errs = [np.sqrt(np.nanmean(exp_error(n)[1] ** 2)) for n in ns]
        h = 1.0 / (np.array(ns) - 1)
        order = np.polyfit(np.log(h), np.log(errs), 1)[0]
        assert order >= 1.5

    def test_triangle_source(self):
        E = make_region("E", gamma=diag_down())
        f = solve_region(E, CharSystem(p1=1.0), BoundaryData.for_E(diag_down(), lambda t: np.zeros(np.shape(t) + (2,))),
                         grid=65)
        X, Y = np.meshgrid(f.x1, f.x2, indexing="ij")
        m = f.mask
        assert np.max(np.abs(f.f1[m] - (X + Y)[m])) < 1e-12
        assert np.max(np.abs(f.f2[m])) < 1e-12

    def test_boundary_propagation_without_coefficients(self):
        E = make_region("E", gamma=diag_down())
        bc = BoundaryData.for_E(diag_down(), lambda t: np.stack([np.sin(3 * t), t**2], -1))
        g = solve_primitive(E, CharSystem(), bc, grid=65)
        zero = GridPairField(g.x1, g.x2, np.zeros_like(g.f1), np.zeros_like(g.f2), g.mask, E)
        Bf = picard_apply(E, CharSystem(), bc, zero)
        X, Y = np.meshgrid(g.x1, g.x2, indexing="ij")
        m = g.mask
        # f1 carries q1 at the curve point with the same x2, f2 carries q2 at the same x1
        assert np.max(np.abs(Bf.f1[m] - np.sin(3 * -Y[m]))) < 1e-6
        assert np.max(np.abs(Bf.f2[m] - X[m] ** 2)) < 1e-6

    def test_fixed_point_residual(self):
        R = unit_square()
        bc = BoundaryData.for_R(1.0, 0.0)
        tol = 1e-10
        f = solve_primitive(R, EXP, bc, tol=tol, grid=65)
        Bf = picard_apply(R, EXP, bc, f)
        assert Bf.l2_distance(f) <= 2 * tol

    def test_exact_solution_is_fixed(self):
        R = unit_square()
        f = solve_primitive(R, EXP, BoundaryData.for_R(1.0, 0.0), grid=129)
        X, _ = np.meshgrid(f.x1, f.x2, indexing="ij")
        exact = GridPairField(f.x1, f.x2, np.exp(X), np.zeros_like(X), f.mask, R)
        Bf = picard_apply(R, EXP, BoundaryData.for_R(1.0, 0.0), exact)
        assert np.max(np.abs(Bf.f1 - np.exp(X))) < 1e-4

    def test_uniqueness_from_other_start(self):
        R = unit_square()
        bc = mf_R_data((0, 0))
        a = solve_primitive(R, mf_system(), bc, tol=1e-13, grid=65)
        rng = np.random.default_rng(1)
        start = GridPairField(a.x1, a.x2, rng.normal(size=a.f1.shape), rng.normal(size=a.f1.shape), a.mask, R)
        b = solve_primitive(R, mf_system(), bc, tol=1e-13, grid=65, initial=start)
        assert np.max(np.abs(a.f1 - b.f1)) < 1e-10 and np.max(np.abs(a.f2 - b.f2)) < 1e-10

    def test_contraction_failure_carries_history(self):
        big = make_region("R", z=(0, 0), a=6, b=6)
        with pytest.raises(ContractionFailure) as info:
            solve_primitive(big, CharSystem(a12=3.0, a21=-3.0), BoundaryData.for_R(1.0, 1.0), grid=65, max_iter=20)
        assert len(info.value.history) > 0

    def test_non_finite_coefficients(self):
        with pytest.raises(SolverError):
            solve_region(unit_square(), CharSystem(a11=np.nan), BoundaryData.for_R(1.0, 0.0), grid=17)


class TestContraction:
    def test_geometric_decrease_on_small_region(self):
        R = make_region("R", z=(0, 0), a=0.5, b=0.5)
        f = solve_region(R, mf_system(), mf_R_data((0, 0)), grid=65)
        assert len(f.reports) == 1
        h = np.array(f.reports[0].history)
        ratios = h[1:] / h[:-1]
        assert np.all(ratios[1:] < 0.9)

    def test_large_region_subdivides_and_matches(self):
        R = make_region("R", z=(0, 0), a=4, b=4)
        f = solve_region(R, mf_system(), mf_R_data((0, 0)), grid=257)
        assert len(f.reports) > 1 and max(r.depth for r in f.reports) >= 1
        assert mf_error(f) <= 1e-3

    def test_subdivided_equals_direct(self):
        # the direct solve contracts on the unit square; the E subdivision must reproduce it
        E = make_region("E", gamma=diag_down())
        bc = BoundaryData.for_E(diag_down(), lambda t: np.stack(mf_f(t, -t), -1))
        sys_ = mf_system()
        direct = solve_primitive(E, sys_, bc, grid=129)
        U = subdivide_E(E, 0.4)
        data = {lab: bc for lab in U.labels if lab.startswith("E")}
        pieced = solve_region(U, sys_, data, grid=129)
        m = direct.mask & pieced.mask
        assert m.sum() > 0.9 * direct.mask.sum()
        assert np.max(np.abs(direct.f1[m] - pieced.f1[m])) < 1e-3
        assert np.max(np.abs(direct.f2[m] - pieced.f2[m])) < 1e-3

    def test_depth_limit(self):
        R = make_region("R", z=(0, 0), a=2, b=2)
        with pytest.raises(UnsolvableInstanceError):
            solve_region(R, CharSystem(a12=20.0, a21=-20.0), BoundaryData.for_R(1.0, 1.0), grid=33,
                         max_iter=5, max_depth=1)


class TestComposite:
    def xi(self):
        return make_region("XiMinus", beta=PlanarCurve.segment((0, 0), (0.5, 0.5)), gamma=diag_down())

    @pytest.mark.parametrize("kind", ["R", "E", "XiMinus"])
    def test_zero_in_zero_out(self, kind):
        if kind == "R":
            reg, bc = unit_square(), BoundaryData.for_R(0.0, 0.0)
        elif kind == "E":
            reg = make_region("E", gamma=diag_down())
            bc = BoundaryData.for_E(diag_down(), lambda t: np.zeros(np.shape(t) + (2,)))
        else:
            reg = self.xi()
            bc = xi_minus_data(reg, lambda t: np.zeros(np.shape(t)), lambda t: np.zeros(np.shape(t) + (2,)))
        f = solve_region(reg, CharSystem(a11=0.3, a12=-1, a21=2, a22=0.1), bc, grid=33)
        assert np.nanmax(np.abs(f.f1)) == 0 and np.nanmax(np.abs(f.f2)) == 0

    def test_shadow_pattern(self):
        xi = self.xi()
        data = xi_minus_data(xi, lambda t: np.ones(np.shape(t)), lambda t: np.zeros(np.shape(t) + (2,)))
        f = solve_region(xi, CharSystem(), data, grid=129)
        X, Y = np.meshgrid(f.x1, f.x2, indexing="ij")
        h = f.x1[1] - f.x1[0]
        inE = make_region("E", gamma=diag_down()).contains(np.stack([X, Y], -1))
        upper = f.mask & (Y > 2 * h)
        lower = f.mask & inE & (Y < -2 * h)
        assert np.allclose(f.f1[upper], 1.0) and np.allclose(f.f1[lower], 0.0)
        assert np.nanmax(np.abs(f.f2)) == 0

    def test_linearity(self):
        rng = np.random.default_rng(7)
        xi = self.xi()
        c = rng.normal(size=(2, 4))
        q1s = [lambda t, k=k: c[k, 0] + c[k, 1] * t for k in range(2)]
        qhs = [lambda t, k=k: np.stack([c[k, 2] * np.cos(t), c[k, 3] * t**2], -1) for k in range(2)]
        sys_ = CharSystem(a11=0.2, a12=0.5, a21=-0.4, a22=0.1)
        alpha = 1.7
        f = [solve_region(xi, sys_, xi_minus_data(xi, q1s[k], qhs[k]), grid=65, tol=1e-14) for k in range(2)]
        comb = solve_region(
            xi, sys_,
            xi_minus_data(xi, lambda t: alpha * q1s[0](t) + q1s[1](t), lambda t: alpha * qhs[0](t) + qhs[1](t)),
            grid=65, tol=1e-14)
        m = comb.mask
        assert np.max(np.abs(comb.f1[m] - alpha * f[0].f1[m] - f[1].f1[m])) < 1e-10
        assert np.max(np.abs(comb.f2[m] - alpha * f[0].f2[m] - f[1].f2[m])) < 1e-10

    def test_xi_minus_manufactured(self):
        xi = self.xi()
        beta = xi.pieces[1].beta
        data = xi_minus_data(xi, lambda t: mf_f(*beta(t).T)[0], lambda t: np.stack(mf_f(t, -t), -1))
        f = solve_region(xi, mf_system(), data, grid=129)
        assert mf_error(f) < 1e-3


class TestTraces:
    def test_right_edge_of_exponential(self):
        f, _ = exp_error(129)
        tr = extract_trace(f, VerticalLine(1.0))
        assert np.max(np.abs(tr.f1 - np.e)) <= 1e-4
        assert tr.norm_f1 == pytest.approx(np.e, abs=1e-4)

    def test_zero_field_traces(self):
        f = solve_region(unit_square(), CharSystem(), BoundaryData.for_R(0.0, 0.0), grid=33)
        for loc in (VerticalLine(0.3), HorizontalLine(0.7), Diagonal((0, 0)), Segment((0, 1), (1, 0))):
            assert extract_trace(f, loc).norm == 0

    def test_curve_and_diagonal_trace(self):
        E = make_region("E", gamma=diag_down())
        f = solve_region(E, CharSystem(p1=1.0), BoundaryData.for_E(diag_down(), lambda t: np.zeros(np.shape(t) + (2,))),
                         grid=65)
        tr = extract_trace(f, CurveLocus(diag_down()))
        assert np.max(np.abs(tr.f1)) < 1e-10
        d = extract_trace(f, Diagonal((0.5, -0.5), 0.4))
        # f1 = x1 + x2 grows by 2 s / sqrt(2) along the diagonal
        assert np.allclose(d.f1, np.sqrt(2) * d.s, atol=1e-10)

    def test_empty_trace(self):
        f, _ = exp_error(17)
        with pytest.raises(EmptyTraceError):
            extract_trace(f, VerticalLine(3.0))

    def test_trace_stability_constant(self):
        # ratio of trace norm to data+source norm stays within 20% under refinement
        ratios = []
        for n in (65, 129, 257):
            f = solve_region(unit_square(), mf_system(), mf_R_data((0, 0)), grid=n)
            X, Y = np.meshgrid(f.x1, f.x2, indexing="ij")
            s = mf_system().evaluate(X, Y)
            rhs = f.l2_norm() + np.sqrt(np.mean(s["p1"] ** 2 + s["p2"] ** 2))
            ratios.append(extract_trace(f, VerticalLine(1.0)).norm / rhs)
        assert max(ratios) / min(ratios) <= 1.2


class TestExport:
    def test_binary_round_trip(self, tmp_path):
        f, _ = exp_error(33)
        f.to_binary(tmp_path / "f.bin")
        g = read_binary(tmp_path / "f.bin")
        assert np.array_equal(g.x1, f.x1) and np.array_equal(g.x2, f.x2)
        assert np.array_equal(np.isnan(g.f1), np.isnan(f.f1))
        assert np.array_equal(g.f1[f.mask], f.f1[f.mask])

    def test_csv(self, tmp_path):
        f, _ = exp_error(17)
        f.to_csv(tmp_path / "f.csv")
        rows = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
        assert rows.shape == (int(f.mask.sum()), 4)
        assert np.allclose(rows[:, 2], np.exp(rows[:, 0]), atol=1e-3)

    def test_deterministic(self):
        a, _ = exp_error(65)
        b, _ = exp_error(65)
        assert np.array_equal(a.f1, b.f1, equal_nan=True)
