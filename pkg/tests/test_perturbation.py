import numpy as np
import pytest

from polarize.cell_solver import zero_volume_tensor
from polarize.errors import InvalidInput, UnresolvedInclusion
from polarize.perturbation import (
    BoundaryFunction,
    DirichletSolution,
    DomainProblem,
    Inclusion,
    StudyTable,
    asymptotic_prediction,
    boundary_functional,
    cell_tensors,
    convergence_study,
    dirichlet_solve,
    measure,
    periodic_array,
    problem_from_dict,
    shrinking_inclusions,
    solve_dirichlet,
)
from polarize.tensor_core import SymTensor

TOL = 1e-10


def nodes(res):
    c = np.arange(res + 1) / res
    return np.meshgrid(c, c, indexing="ij")


def disk_problem(res, phases, radius=0.1, f="linear_x", phi="linear_x"):
    return DomainProblem(res, phases, (Inclusion("disk", (0.5, 0.5), radius),), BoundaryFunction(f), BoundaryFunction(phi))


class TestDirichlet:
    def test_linear_background(self):
        x, _ = nodes(16)
        sol = dirichlet_solve(np.full((16, 16), 2.0), BoundaryFunction("linear_x"), 16)
        np.testing.assert_allclose(sol.values, x, atol=1e-10)

    def test_linear_anisotropic(self):
        x, _ = nodes(16)
        sol = dirichlet_solve(np.diag([3.0, 0.5]), BoundaryFunction("linear_x"), 16)
        np.testing.assert_allclose(sol.values, x, atol=1e-10)

    def test_bilinear(self):
        x, y = nodes(24)
        sol = dirichlet_solve(np.full((24, 24), 1.0), BoundaryFunction("bilinear"), 24)
        np.testing.assert_allclose(sol.values, x * y, atol=1e-10)

    def test_harmonic_fourier_mode_converges(self):
        errs = []
        for res in (16, 32, 64):
            x, y = nodes(res)
            f = BoundaryFunction("fourier_k", 2)
            sol = dirichlet_solve(np.ones((res, res)), f, res)
            errs.append(np.abs(sol.values - f(x, y)).max())
        assert errs[0] > errs[1] > errs[2]
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)

    def test_constant_data(self):
        sol = dirichlet_solve(np.ones((8, 8)), BoundaryFunction("constant"), 8)
        np.testing.assert_allclose(sol.values, 1.0, atol=1e-12)

    def test_catalog(self):
        with pytest.raises(InvalidInput):
            BoundaryFunction("sawtooth")
        assert BoundaryFunction.from_obj({"name": "fourier_k", "k": 3}).k == 3


class TestGeometry:
    def test_margin(self, phases):
        with pytest.raises(InvalidInput):
            DomainProblem(32, phases, (Inclusion("disk", (0.5, 0.05), 0.02),))

    def test_unresolved(self, phases):
        prob = disk_problem(32, phases, radius=0.04)
        with pytest.raises(UnresolvedInclusion):
            prob.check_resolved()
        with pytest.raises(UnresolvedInclusion):
            convergence_study([prob], SymTensor.identity(2))

    def test_volume_matches_pixels(self, phases):
        prob = disk_problem(128, phases, radius=0.2)
        assert prob.inclusion_volume == pytest.approx(np.pi * 0.04, rel=1e-2)
        assert prob.inclusion_volume == np.count_nonzero(prob.chi()) / 128**2

    def test_periodic_array_needs_whole_periods(self, phases):
        with pytest.raises(InvalidInput):
            periodic_array(100, phases, levels=3)

    def test_periodic_array_fraction(self, phases):
        fam = periodic_array(64, phases, levels=2)
        for prob in fam:
            assert prob.inclusion_volume == pytest.approx(0.25 * 0.25, abs=1e-12)
            assert prob.cell.theta == 0.25


class TestFunctional:
    def test_no_inclusion_is_zero(self, phases):
        prob = DomainProblem(32, phases, (), BoundaryFunction("fourier_k"), BoundaryFunction("bilinear"))
        out = measure(prob, SymTensor.identity(2), SymTensor(2.0 * np.eye(2)))
        assert abs(out.measured) <= 10 * TOL
        assert abs(out.boundary_form) <= 10 * TOL
        assert out.predicted == 0.0

    def test_constant_test_function_is_zero(self, phases):
        prob = disk_problem(64, phases, f="fourier_k", phi="constant")
        out = measure(prob, SymTensor.identity(2))
        assert abs(out.measured) <= 10 * TOL

    def test_forms_agree(self, phases):
        gaps = []
        for res in (64, 256):
            prob = disk_problem(res, phases)
            u_eps = solve_dirichlet(prob, "inhomogeneous", TOL)
            u_hom = solve_dirichlet(prob, "homogenized", TOL)
            g = solve_dirichlet(prob, "background", TOL, data=prob.phi)
            val = boundary_functional(prob, u_eps, u_hom, None, g)
            gaps.append(val.discrepancy / abs(val.volume))
        assert gaps[-1] < 0.05

    def test_linear_in_test_function(self, phases):
        prob = disk_problem(64, phases, f="bilinear")
        u_eps = solve_dirichlet(prob, "inhomogeneous", TOL)
        u_hom = solve_dirichlet(prob, "homogenized", TOL)
        g1 = solve_dirichlet(prob, "background", TOL, data=BoundaryFunction("linear_x"))
        g2 = solve_dirichlet(prob, "background", TOL, data=BoundaryFunction("fourier_k", 2))
        a, b = 0.7, -2.3
        combo = DirichletSolution(a * g1.values + b * g2.values, g1.info, g1.coefficient)
        lhs = boundary_functional(prob, u_eps, u_hom, None, combo)
        f1 = boundary_functional(prob, u_eps, u_hom, None, g1)
        f2 = boundary_functional(prob, u_eps, u_hom, None, g2)
        assert lhs.volume == pytest.approx(a * f1.volume + b * f2.volume, abs=1e-12)
        assert lhs.boundary == pytest.approx(a * f1.boundary + b * f2.boundary, abs=1e-12)

    def test_sign_of_dilute_disk(self, phases):
        prob = disk_problem(128, phases, radius=0.1)
        out = measure(prob, zero_volume_tensor("disk", phases.gamma1, phases.gamma0))
        assert out.measured < 0.0
        assert out.predicted < 0.0


class TestPrediction:
    def test_uniform_gradient_closed_form(self, phases):
        prob = disk_problem(64, phases, radius=0.1)
        u = solve_dirichlet(prob, "homogenized", TOL)
        g = solve_dirichlet(prob, "background", TOL, data=prob.phi)
        m = SymTensor.diag([4 / 3, 4 / 3])
        vol = prob.inclusion_volume
        pred = asymptotic_prediction(prob, m, None, u, g, vol)
        assert pred == pytest.approx(vol * (phases.gamma1 - phases.gamma0) * 4 / 3, rel=1e-9)

    def test_zero_volume_background(self, phases):
        prob = DomainProblem(16, phases, ())
        u = solve_dirichlet(prob, "homogenized", TOL)
        g = solve_dirichlet(prob, "background", TOL, data=prob.phi)
        assert asymptotic_prediction(prob, SymTensor.identity(2), None, u, g, 0.0) == 0.0

    def test_periodic_volume_equal_to_delta(self, phases):
        prob = periodic_array(64, phases, levels=1)[0]
        ms, gs, delta = cell_tensors([prob])
        u = solve_dirichlet(prob, "homogenized", TOL, gs[0])
        g = solve_dirichlet(prob, "background", TOL, data=prob.phi)
        assert prob.inclusion_volume == pytest.approx(delta, abs=1e-15)
        assert asymptotic_prediction(prob, ms[0], gs[0], u, g, prob.inclusion_volume, delta) == pytest.approx(0.0, abs=1e-15)


class TestStudy:
    def test_empty(self):
        table = convergence_study([], SymTensor.identity(2))
        assert table.rows() == []
        assert table.to_csv() == "epsilon,volume,measured,predicted,residual\n"

    def test_shrinking_disks(self, phases):
        fam = shrinking_inclusions(128, phases, levels=3)
        table = convergence_study(fam, zero_volume_tensor("disk", phases.gamma1, phases.gamma0))
        rel = table.relative_residuals()
        assert rel[0] > rel[1] > rel[2]
        assert table.decay_rate() > 0.0
        assert table.to_csv().splitlines()[0] == ",".join(StudyTable.HEADER)

    def test_periodic_residual_shrinks(self, phases):
        fam = periodic_array(128, phases, levels=2)
        ms, gs, delta = cell_tensors(fam)
        table = convergence_study(fam, ms, gs, delta)
        res = [abs(m.residual) for m in table.measurements]
        assert res[1] < res[0]

    def test_problem_from_dict(self, phases):
        fam, regime = problem_from_dict({"resolution": 64, "inclusions": [{"shape": "square", "center": [0.5, 0.5], "size": 0.1}]}, phases)
        assert regime == "dilute" and len(fam) == 1
        fam, regime = problem_from_dict({"resolution": 64, "family": {"kind": "shrinking", "levels": 2}, "phi": {"name": "fourier_k", "k": 2}}, phases)
        assert regime == "dilute" and len(fam) == 2 and fam[0].phi.k == 2
        fam, regime = problem_from_dict({"resolution": 64, "family": {"kind": "periodic_array", "levels": 2}}, phases)
        assert regime == "periodic"
        with pytest.raises(InvalidInput):
            problem_from_dict({"resolution": 64, "family": {"kind": "spiral"}}, phases)
        with pytest.raises(InvalidInput):
            problem_from_dict({"inclusions": []}, phases)
