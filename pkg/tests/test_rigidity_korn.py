import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypershell.rigidity_korn import (
    InvalidShellError,
    QuotientRecord,
    RigidityError,
    SaturationError,
    ShellDisplacement3D,
    ShellModel,
    divergence_identity_check,
    divergence_identity_surface,
    fit_scaling,
    korn_gram,
    korn_quotient,
    lemma51_identity_check,
    max_generalized_eigenvalue,
    random_probe_fields,
    random_shell_displacement,
    rigidity_estimate_probe,
    saturated_quotient,
    write_records_csv,
    write_records_json,
)
from hypershell.strain_system import ShellDisplacementSurface, SmoothAmbientField, rigid_motion
from hypershell.surface_geometry import normal

BOX = ((0.6, 1.6), (-0.5, 0.5))
PBOX = ((-0.5, 0.5), (-0.5, 0.5))


@pytest.fixture(scope="module")
def gram(saddle):
    shell = ShellModel(saddle, BOX, 0.1)
    return korn_gram(shell, 4, surf_nodes=30)


class TestShellModel:
    def test_quadrature_weights(self, saddle):
        for h in (0.2, 0.05):
            assert ShellModel(saddle, BOX, h).weights_sum == pytest.approx(h, rel=1e-14)

    def test_invalid(self, saddle):
        with pytest.raises(InvalidShellError):
            ShellModel(saddle, BOX, 0.0)
        with pytest.raises(InvalidShellError):
            ShellModel(saddle, BOX, 5.0)
        with pytest.raises(InvalidShellError):
            ShellModel(saddle, BOX, 0.1, free_side="inside")

    @pytest.mark.parametrize("modes", ["legendre", "sine"])
    @pytest.mark.parametrize("free", ["top", "left"])
    def test_lambda_at_least_one(self, saddle, modes, free):
        rec = korn_quotient(ShellModel(saddle, BOX, 0.1, modes=modes, free_side=free), 3, surf_nodes=24)
        assert rec.lambda_max >= 1.0
        assert rec.basis_dim == 3 * 9 * 3


class TestQuotient:
    def test_gram_symmetric_and_ordered(self, gram):
        A, B, _ = gram
        assert np.allclose(A, A.T) and np.allclose(B, B.T)
        # A - B is the squared antisymmetric part, positive semidefinite
        assert np.linalg.eigvalsh(A - B).min() > -1e-10 * np.abs(A).max()

    def test_rayleigh_bound(self, gram):
        A, B, _ = gram
        lam = max_generalized_eigenvalue(A, B)["lambda_max"]
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=A.shape[0])
            assert (v @ A @ v) / (v @ B @ v) <= lam + 1e-8

    def test_power_iteration_agrees_with_dense(self, gram):
        A, B, _ = gram
        ev = max_generalized_eigenvalue(A, B)
        ref = np.max(np.real(np.linalg.eigvals(np.linalg.solve(B, A))))
        assert ev["lambda_max"] == pytest.approx(ref, rel=1e-8)
        assert ev["power_lambda"] <= ev["lambda_max"] * (1 + 1e-10)

    def test_rescaling_invariance(self, gram):
        A, B, _ = gram
        d = np.exp(np.random.default_rng(1).uniform(-3, 3, A.shape[0]))
        a = max_generalized_eigenvalue(A, B)["lambda_max"]
        b = max_generalized_eigenvalue(A * d[:, None] * d, B * d[:, None] * d)["lambda_max"]
        assert b == pytest.approx(a, rel=1e-10)

    def test_monotone_in_basis(self, saddle):
        shell = ShellModel(saddle, BOX, 0.1)
        lams = [korn_quotient(shell, K, surf_nodes=30).lambda_max for K in (2, 3, 4, 5)]
        assert all(b >= a * (1 - 1e-10) for a, b in zip(lams, lams[1:]))

    def test_deflation_of_singular_B(self):
        A = np.diag([2.0, 3.0, 1.0])
        B = np.diag([1.0, 1.0, 0.0])
        ev = max_generalized_eigenvalue(A, B)
        assert ev["deflated"] == 1 and ev["lambda_max"] == pytest.approx(3.0)

    def test_thinner_is_stiffer(self, saddle):
        a = korn_quotient(ShellModel(saddle, BOX, 0.2), 4, surf_nodes=30).lambda_max
        b = korn_quotient(ShellModel(saddle, BOX, 0.1), 4, surf_nodes=30).lambda_max
        assert b > a

    def test_saturation_failure_carries_report(self, saddle):
        with pytest.raises(SaturationError) as info:
            saturated_quotient(ShellModel(saddle, BOX, 0.05), [2, 3], rel=1e-6)
        assert len(info.value.report["history"]) == 2


class TestFit:
    HS = [0.2, 0.141, 0.1, 0.071, 0.05]

    def test_exact_power_law(self):
        f = fit_scaling([QuotientRecord(h, h ** (-4 / 3), 0, 0, 0.0) for h in self.HS])
        assert f.slope == pytest.approx(-4 / 3, abs=1e-12) and f.stderr < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 100.0))
    def test_noisy_power_law(self, seed, c):
        rng = np.random.default_rng(seed)
        recs = [(h, c * h ** (-4 / 3) * (1 + 0.05 * rng.uniform(-1, 1))) for h in self.HS]
        assert fit_scaling(recs).slope == pytest.approx(-4 / 3, abs=0.05 * 4 / 3 * 1.5)

    def test_local_slopes(self):
        f = fit_scaling([(h, h ** -2.0) for h in self.HS])
        assert np.allclose(f.local_slopes, -2.0)

    def test_preconditions(self):
        with pytest.raises(RigidityError):
            fit_scaling([(0.1, 1.0), (0.09, 2.0), (0.08, 3.0)])
        with pytest.raises(RigidityError):
            fit_scaling([(0.1, 1.0), (0.09, 2.0), (0.08, 3.0), (0.07, 4.0)])
        rec = QuotientRecord(0.1, 5.0, 1, 1, 0.0)
        rec.saturated = False
        with pytest.raises(SaturationError):
            fit_scaling([rec] + [QuotientRecord(h, 1.0, 1, 1, 0.0) for h in self.HS[:3]])

    def test_exports(self, tmp_path):
        recs = [QuotientRecord(h, h ** -1.4, 10, 3, 1e-10) for h in self.HS]
        fit = fit_scaling(recs)
        write_records_csv(recs, tmp_path / "r.csv")
        write_records_json(recs, fit, tmp_path / "r.json")
        rows = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1)
        assert np.allclose(rows[:, 3], np.log(rows[:, 2]))
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["fit"]["slope"] == pytest.approx(-1.4)


def _wave_fields(u):
    return np.stack([np.sin(u[..., 0] + 2 * u[..., 1]), np.cos(u[..., 0] * u[..., 1])], -1)


def _w(u):
    return np.exp(u[..., 0]) * np.sin(u[..., 1] + 1)


class TestDivergenceIdentity:
    def test_zero_normal(self, paraboloid):
        r = divergence_identity_surface(paraboloid, PBOX, _wave_fields, lambda u: np.zeros(u.shape[:-1]), 17)
        assert np.max(np.abs(r["lhs"])) == 0 and np.max(np.abs(r["rhs"])) == 0

    def test_zero_tangential(self, saddle):
        r = divergence_identity_surface(saddle, BOX, lambda u: np.zeros(u.shape), _w, 17)
        assert np.max(np.abs(r["lhs"])) == 0 and np.max(np.abs(r["rhs"])) == 0

    @pytest.mark.parametrize("surface,box", [("paraboloid", PBOX), ("saddle", BOX)])
    def test_second_order(self, request, surface, box):
        S = request.getfixturevalue(surface)
        res = [divergence_identity_surface(S, box, _wave_fields, _w, n) for n in (33, 65, 129)]
        e = [r["max_residual"] for r in res]
        assert e[0] / e[1] > 3.5 and e[1] / e[2] > 3.5
        assert abs(res[2]["integrated_residual"]) < abs(res[0]["integrated_residual"]) / 10

    def test_on_asymptotic_chart(self, saddle_chart):
        y = SmoothAmbientField.random(saddle_chart.surface, np.random.default_rng(8))
        disp = ShellDisplacementSurface.from_ambient(saddle_chart, y(saddle_chart.u))
        r = divergence_identity_check(disp)
        assert r["max_residual"] < 1e-3 * r["scale"]

    def test_needs_full_grid(self, saddle_chart):
        d = ShellDisplacementSurface.zeros(saddle_chart)
        d.mask[0, 0] = False
        with pytest.raises(RigidityError):
            divergence_identity_check(d)


class TestThinShellGradientIdentity:
    def test_zero(self, saddle):
        zero = ShellDisplacement3D(saddle, lambda u, t: np.zeros(np.shape(u)), lambda u, t: np.zeros(np.shape(u)[:-1]))
        r = lemma51_identity_check(zero, np.array([1.0, 0.2]), 0.02)
        assert r["lhs_full"] == 0 and r["rhs_full"] == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_random_field(self, saddle, seed):
        d = random_shell_displacement(saddle, np.random.default_rng(seed))
        u = np.random.default_rng(100 + seed).uniform([0.7, -0.4], [1.5, 0.4])
        r = lemma51_identity_check(d, u, 0.1 / 4)
        assert r["rel_full"] <= 1e-3 and r["rel_sym"] <= 1e-3

    def test_mid_surface_reduction(self, paraboloid):
        # t-independent fields at t = 0: |sym grad y|^2 = |Upsilon|^2 + |Dw - i(W) Pi|^2 / 2
        rng = np.random.default_rng(4)
        K = rng.uniform(-2, 2, (3, 2))
        d = ShellDisplacement3D(paraboloid,
                                lambda u, t: np.stack([np.sin(u @ K[0]), np.cos(u @ K[1])], -1),
                                lambda u, t: np.sin(u @ K[2] + 0.3))
        r = lemma51_identity_check(d, np.array([0.2, -0.1]), 0.0)
        assert r["rel_sym"] <= 1e-6

    def test_order_in_fd_step(self, saddle):
        d = random_shell_displacement(saddle, np.random.default_rng(21))
        u = np.array([1.1, 0.2])
        e = [lemma51_identity_check(d, u, 0.02, delta=s)["rel_full"] for s in (4e-2, 2e-2, 1e-2)]
        assert np.log2(e[0] / e[1]) >= 1 and np.log2(e[1] / e[2]) >= 1

    def test_not_injective(self, saddle):
        d = random_shell_displacement(saddle, np.random.default_rng(0))
        with pytest.raises(InvalidShellError):
            lemma51_identity_check(d, np.array([1.0, 0.0]), 5.0)


class TestEstimateProbe:
    def test_zero_fields_guarded(self, paraboloid):
        zero = (lambda u: np.zeros(u.shape), lambda u: np.zeros(u.shape[:-1]))
        rep = rigidity_estimate_probe(paraboloid, PBOX, [zero, zero], n=17)
        assert rep.guarded == 2 and rep.violations == 0 and rep.ratios == []

    def test_rigid_motion_finite(self, paraboloid):
        y = rigid_motion(paraboloid, [1.0, 0.5, -0.2], [0.3, -0.4, 1.0])
        fields = [(y.tangential_u, lambda u: np.einsum("...k,...k->...", y(u), normal(paraboloid, u)))]
        rep = rigidity_estimate_probe(paraboloid, PBOX, fields, n=33)
        assert rep.violations == 0 and np.isfinite(rep.constant) and rep.constant > 0

    def test_violation_counted(self, paraboloid):
        fields = random_probe_fields(np.random.default_rng(2), PBOX, 5)
        rep = rigidity_estimate_probe(paraboloid, PBOX, fields, n=33, constant=1e-9)
        assert rep.violations == 5

    @pytest.mark.parametrize("kind,clamp", [("W", False), ("w", True)])
    def test_constant_stable_under_refinement(self, paraboloid, kind, clamp):
        fields = random_probe_fields(np.random.default_rng(3), PBOX, 10, clamp=clamp)
        a = rigidity_estimate_probe(paraboloid, PBOX, fields, n=65, kind=kind)
        b = rigidity_estimate_probe(paraboloid, PBOX, fields, n=129, kind=kind, constant=1.3 * a.constant)
        assert b.violations == 0
        assert abs(b.constant - a.constant) <= 0.3 * a.constant

    def test_unknown_kind(self, paraboloid):
        with pytest.raises(ValueError):
            rigidity_estimate_probe(paraboloid, PBOX, random_probe_fields(np.random.default_rng(0), PBOX, 1),
                                    n=9, kind="q")

