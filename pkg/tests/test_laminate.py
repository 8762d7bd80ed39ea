import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polarize.bounds import check_pointwise, check_trace_theta
from polarize.cell_solver import polarization_from_effective
from polarize.errors import InvalidInput, TargetOffCurve, TargetOutOfRange
from polarize.laminate import (
    LaminateSpec,
    design_laminate_for_eigenvalues,
    dilution_eigenvalues,
    laminate_effective_tensor,
    laminate_polarization,
    realize_zero_volume,
    run_dilution_study,
    stages_to_weights,
    weights_to_stages,
)
from polarize.tensor_core import PhasePair, SymTensor


def harmonic(t, a, b):
    return 1.0 / (t / a + (1.0 - t) / b)


def arithmetic(t, a, b):
    return t * a + (1.0 - t) * b


@st.composite
def laminate_specs(draw, matrix_phases=("gamma0", "gamma1")):
    n = draw(st.sampled_from([2, 3]))
    p = draw(st.integers(1, n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(p, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w = rng.dirichlet(np.ones(p))
    w[-1] = 1.0 - w[:-1].sum()
    theta = draw(st.floats(0.02, 0.98))
    phase = draw(st.sampled_from(matrix_phases))
    return LaminateSpec(tuple(map(tuple, dirs)), theta, phase, weights=tuple(w))


@st.composite
def phase_pairs(draw):
    g1 = draw(st.floats(0.1, 5.0))
    r = draw(st.floats(1.05, 20.0))
    return PhasePair(g1, g1 * r)


class TestSpec:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidInput):
            LaminateSpec([(1.0, 0.0)], 0.5, weights=[0.9])

    def test_exactly_one_parameterization(self):
        with pytest.raises(InvalidInput):
            LaminateSpec([(1.0, 0.0)], 0.5)
        with pytest.raises(InvalidInput):
            LaminateSpec([(1.0, 0.0)], 0.5, weights=[1.0], stage_proportions=[0.5])

    def test_theta_range(self):
        with pytest.raises(InvalidInput):
            LaminateSpec([(1.0, 0.0)], 0.0, weights=[1.0])

    def test_non_unit_direction(self):
        with pytest.raises(InvalidInput):
            LaminateSpec([(1.0, 1.0)], 0.5, weights=[1.0])

    @pytest.mark.parametrize("phase", ["gamma0", "gamma1"])
    def test_stage_weight_roundtrip(self, phase):
        stages = (0.6, 0.7, 0.8)
        theta, w = stages_to_weights(stages, phase)
        np.testing.assert_allclose(weights_to_stages(theta, w, phase), stages, atol=1e-14)
        assert sum(w) == pytest.approx(1.0, abs=1e-14)


class TestEffectiveTensor:
    def test_rank_one_means(self, phases):
        spec = LaminateSpec([(1.0, 0.0)], 0.5, "gamma0", weights=[1.0])
        assert laminate_effective_tensor(spec, phases).allclose(np.diag([4 / 3, 3 / 2]), atol=1e-14)

    def test_rank_one_role_symmetric(self, phases):
        spec = LaminateSpec([(1.0, 0.0)], 0.5, "gamma1", weights=[1.0])
        assert laminate_effective_tensor(spec, phases).allclose(np.diag([4 / 3, 3 / 2]), atol=1e-14)

    def test_all_core(self, phases):
        spec = LaminateSpec([(1.0, 0.0)], 1.0, "gamma0", weights=[1.0])
        assert laminate_effective_tensor(spec, phases).allclose(np.eye(2), atol=1e-14)

    def test_stagewise_matches_layer_by_layer(self, phases):
        # stage 1 layered along e1 is the innermost laminate
        t1, t2 = 0.6, 0.7
        spec = LaminateSpec([(1, 0), (0, 1)], t1 * t2, "gamma0", stage_proportions=(t1, t2))
        a11, a22 = harmonic(t1, 1.0, 2.0), arithmetic(t1, 1.0, 2.0)
        want = np.diag([arithmetic(t2, a11, 2.0), harmonic(t2, a22, 2.0)])
        assert laminate_effective_tensor(spec, phases).allclose(want, atol=1e-14)
        assert laminate_effective_tensor(spec.as_weights(), phases).allclose(want, atol=1e-14)

    def test_stagewise_gamma1_matrix_matches_layer_by_layer(self, phases):
        t1, t2 = 0.6, 0.7
        spec = LaminateSpec([(1, 0), (0, 1)], 1 - (1 - t1) * (1 - t2), "gamma1", stage_proportions=(t1, t2))
        a11, a22 = harmonic(1 - t1, 2.0, 1.0), arithmetic(1 - t1, 2.0, 1.0)
        want = np.diag([arithmetic(1 - t2, a11, 1.0), harmonic(1 - t2, a22, 1.0)])
        assert laminate_effective_tensor(spec, phases).allclose(want, atol=1e-14)
        assert laminate_effective_tensor(spec.as_weights(), phases).allclose(want, atol=1e-14)

    @given(laminate_specs(), phase_pairs())
    def test_weighted_and_stagewise_routes_agree(self, spec, ph):
        a = laminate_effective_tensor(spec, ph)
        b = laminate_effective_tensor(spec.as_stages(), ph)
        assert a.allclose(b, atol=1e-10 * ph.gamma0)

    @given(laminate_specs(), phase_pairs())
    def test_eigenvalues_between_means(self, spec, ph):
        lam = laminate_effective_tensor(spec, ph).eigenvalues()
        t = spec.theta
        assert lam.min() >= harmonic(t, ph.gamma1, ph.gamma0) * (1 - 1e-12)
        assert lam.max() <= arithmetic(t, ph.gamma1, ph.gamma0) * (1 + 1e-12)


class TestPolarization:
    def test_rank_one(self, phases):
        spec = LaminateSpec([(1.0, 0.0)], 0.5, "gamma0", weights=[1.0])
        assert laminate_polarization(spec, phases).allclose(np.diag([4 / 3, 1.0]), atol=1e-14)

    def test_all_core_is_identity(self, phases):
        spec = LaminateSpec([(1.0, 0.0), (0.0, 1.0)], 1.0, "gamma0", weights=[0.3, 0.7])
        assert laminate_polarization(spec, phases).allclose(np.eye(2), atol=1e-14)

    def test_unweighted_direction_has_unit_eigenvalue(self, phases):
        spec = LaminateSpec([(1.0, 0.0), (0.0, 1.0)], 0.4, "gamma0", weights=[0.0, 1.0])
        assert laminate_polarization(spec, phases).matrix[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_role_consistency_hundred_specs(self, phases):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 4))
            p = int(rng.integers(1, n + 1))
            dirs = rng.normal(size=(p, n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            w = rng.dirichlet(np.ones(p))
            w[-1] = 1.0 - w[:-1].sum()
            theta = float(rng.uniform(0.05, 0.95))
            for phase in ("gamma0", "gamma1"):
                spec = LaminateSpec(tuple(map(tuple, dirs)), theta, phase, weights=tuple(w))
                direct = laminate_polarization(spec, phases)
                via = polarization_from_effective(laminate_effective_tensor(spec, phases), theta, phases)
                assert direct.allclose(via, atol=1e-10)

    @given(laminate_specs(), phase_pairs())
    def test_bound_membership(self, spec, ph):
        m = laminate_polarization(spec, ph)
        assert check_pointwise(m, spec.theta, ph, tol=1e-9).ok
        assert check_trace_theta(m, spec.theta, ph, tol=1e-9 * max(1.0, 1.0 / spec.theta)).ok

    @given(laminate_specs(matrix_phases=("gamma1",)), phase_pairs())
    def test_upper_trace_bound_attained(self, spec, ph):
        t, n = spec.theta, spec.dim
        m = laminate_polarization(spec, ph).matrix
        tr = np.trace(np.linalg.inv(np.eye(n) - t * m))
        bound = n / (1 - t) + t / (1 - t) * (ph.contrast - 1)
        assert tr == pytest.approx(bound, rel=1e-10)

    @given(laminate_specs(matrix_phases=("gamma0",)), phase_pairs())
    def test_lower_trace_bound_attained(self, spec, ph):
        t, n = spec.theta, spec.dim
        m = laminate_polarization(spec, ph).matrix
        tr = np.trace(np.linalg.inv(t * m))
        bound = n / t - (1 - t) / t * (1 - 1 / ph.contrast)
        assert tr == pytest.approx(bound, rel=1e-10)


class TestDesign:
    def test_vertex(self, phases):
        spec = design_laminate_for_eigenvalues([2.0, 1.0], 0.3, phases)
        np.testing.assert_allclose(spec.weights, [1.0, 0.0], atol=1e-15)
        assert spec.matrix_phase == "gamma1"
        assert spec.directions == ((1.0, 0.0), (0.0, 1.0))

    def test_midpoint(self, phases):
        spec = design_laminate_for_eigenvalues([1.5, 1.5], 0.3, phases)
        np.testing.assert_allclose(spec.weights, [0.5, 0.5], atol=1e-15)

    def test_off_curve(self, phases):
        with pytest.raises(TargetOffCurve):
            design_laminate_for_eigenvalues([1.0, 1.0], 0.3, phases)

    def test_out_of_range(self, phases):
        with pytest.raises(TargetOutOfRange):
            design_laminate_for_eigenvalues([2.5, 0.5], 0.3, phases)

    def test_tensor_target_uses_its_frame(self, phases):
        a = np.deg2rad(25.0)
        q = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        target = SymTensor(q @ np.diag([1.25, 1.75]) @ q.T)
        spec = design_laminate_for_eigenvalues(target, 1e-8, phases)
        m = laminate_polarization(spec, phases)
        assert m.allclose(target, atol=1e-6)

    def test_lower_curve_design(self, phases):
        spec = design_laminate_for_eigenvalues([1.5, 1.2], 1e-9, phases, curve="lower")
        assert spec.matrix_phase == "gamma0"
        np.testing.assert_allclose(laminate_polarization(spec, phases).eigenvalues(), [1.2, 1.5], atol=1e-8)


class TestDilution:
    def test_zero_weight(self, phases):
        np.testing.assert_allclose(dilution_eigenvalues([0.0, 1.0], 0.37, phases)[0], 1.0)

    def test_full_weight(self, phases):
        assert dilution_eigenvalues([1.0, 0.0], 0.1, phases)[0] == pytest.approx(2 / 1.1, abs=1e-15)

    def test_full_weight_limit(self, phases):
        assert dilution_eigenvalues([1.0, 0.0], 1e-12, phases)[0] == pytest.approx(2.0, abs=1e-11)

    @given(st.floats(0.0, 1.0), st.floats(1e-3, 0.999), phase_pairs())
    def test_matches_laminate_and_trace_identity(self, m1, theta, ph):
        w = np.array([m1, 1.0 - m1])
        lam = dilution_eigenvalues(w, theta, ph)
        r = ph.contrast
        assert np.all(lam >= 1.0 - 1e-12)
        assert np.all(lam <= r / (theta * (r - 1) + 1) + 1e-12)
        tr = np.sum(1.0 / (1.0 - theta * lam))
        assert tr == pytest.approx(2 / (1 - theta) + theta / (1 - theta) * (r - 1), rel=1e-10)
        spec = LaminateSpec([(1, 0), (0, 1)], theta, "gamma1", weights=tuple(w))
        np.testing.assert_allclose(np.diag(laminate_polarization(spec, ph).matrix), lam, rtol=1e-10)

    @pytest.mark.parametrize("m1", [0.0, 0.25, 0.5, 0.9, 1.0])
    def test_monotone_in_theta(self, phases, m1):
        thetas = np.linspace(0.005, 0.995, 100)
        lam = np.array([dilution_eigenvalues([m1, 1 - m1], t, phases) for t in thetas])
        assert np.all(np.diff(lam, axis=0) <= 1e-15)

    def test_study_vertex(self, phases):
        thetas = [2.0**-n for n in range(1, 11)]
        trace = run_dilution_study([2.0, 1.0], thetas, phases)
        np.testing.assert_allclose(np.diag(trace.limit_estimate.matrix), [2.0, 1.0], atol=1e-3)
        # deviation is 2 theta / (1 + theta): the fitted slope over this range
        t = np.asarray(thetas)
        oracle = np.polyfit(np.log(t), np.log(2 * t / (1 + t)), 1)[0]
        assert trace.rate_estimate == pytest.approx(oracle, abs=1e-12)
        assert 0.8 <= trace.rate_estimate <= 1.2

    def test_study_midpoint(self, phases):
        thetas = [2.0**-n for n in range(1, 11)]
        trace = run_dilution_study([1.5, 1.5], thetas, phases)
        np.testing.assert_allclose(trace.limit_estimate.matrix, 1.5 * np.eye(2), atol=1e-3)

    def test_study_closed_form_deviation(self, phases):
        thetas = [0.5, 0.25, 0.125]
        trace = run_dilution_study([2.0, 1.0], thetas, phases)
        for t, m in zip(thetas, trace.tensors):
            assert m.matrix[0, 0] == pytest.approx(2.0 / (1.0 + t), abs=1e-14)

    def test_study_rejects_constant_sequence(self, phases):
        with pytest.raises(InvalidInput):
            run_dilution_study([2.0, 1.0], [0.1, 0.1, 0.1], phases)

    def test_interior_target_realized(self, phases):
        target = [1.4, 1.3]
        real = realize_zero_volume(target, phases)
        assert 0.0 < real.upper_share < 1.0
        np.testing.assert_allclose(real.polarization(1e-10, phases).eigenvalues(), sorted(target), atol=1e-8)

    def test_interior_endpoints_on_curves(self, phases):
        target = np.array([1.4, 1.3])
        real = realize_zero_volume(target, phases)
        up, lo = np.array(real.upper_target), np.array(real.lower_target)
        assert up.sum() == pytest.approx(1 + phases.contrast, abs=1e-12)
        assert np.sum(1 / lo) == pytest.approx(1 + 1 / phases.contrast, abs=1e-12)
        # both endpoints sit on the (1, 1) line through the target and mix back to it
        np.testing.assert_allclose(up - target, (up - target)[0], atol=1e-14)
        np.testing.assert_allclose(lo - target, (lo - target)[0], atol=1e-14)
        np.testing.assert_allclose(real.upper_share * up + (1 - real.upper_share) * lo, target, atol=1e-12)
        spec = design_laminate_for_eigenvalues(real.upper_target, 0.1, phases)
        np.testing.assert_allclose(spec.lamination_weights(), real.upper_weights, atol=1e-14)

    def test_boundary_endpoints(self, phases):
        real = realize_zero_volume([1.5, 1.5], phases)
        assert real.upper_target == (1.5, 1.5) and real.lower_target is None

    def test_outside_target_rejected(self, phases):
        with pytest.raises(TargetOutOfRange):
            realize_zero_volume([1.0, 1.0], phases)
