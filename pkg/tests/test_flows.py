import numpy as np
import pytest
from numpy.testing import assert_allclose

import spincm as sc
from spincm.errors import ConstraintViolationError, SingularConfigurationError
from spincm.flows import (
    FlowSpec,
    conservation_report,
    explicit_second_flow_rhs,
    flow_map,
    flow_rhs,
    hamiltonian_trace_power,
    hierarchy_gradient,
    hierarchy_hamiltonian,
    integrate,
    pole_velocity_from_residue,
    sorted_spectrum,
    spectrum_drift,
)
from spincm.phase_core import lax_matrix, m_matrix, overlap_matrix
from spincm.state import gauge_normalize, pack_coordinates
from spincm.verify import gradient_fd_relative_error

from conftest import hand_second_hamiltonian_gradient, lax_rational, make_state


class TestHamiltonians:
    def test_trace_power_one_is_momentum_sum(self, state):
        assert hamiltonian_trace_power(state, 1) == pytest.approx(-np.sum(state.p), rel=1e-14)

    def test_trace_power_two_closed_form(self):
        s = make_state(n=2, nc=2, seed=9)
        R = overlap_matrix(s)
        d = s.x[0] - s.x[1]
        closed = np.sum(s.p**2) - s.gamma**2 * 2.0 * R[0, 1] * R[1, 0] / np.sinh(s.gamma * d) ** 2
        assert hamiltonian_trace_power(s, 2) == pytest.approx(closed, rel=1e-12)

    def test_trace_power_two_is_trace(self, state):
        L = lax_matrix(state)
        assert hamiltonian_trace_power(state, 2) == pytest.approx(np.trace(L @ L), rel=1e-12)

    def test_hierarchy_m1_equals_trace(self, state):
        assert hierarchy_hamiltonian(state, 1) == pytest.approx(
            hamiltonian_trace_power(state, 1), rel=1e-13
        )

    def test_hierarchy_m2_constant_shift(self, state):
        shift = state.n_particles * state.gamma**2 / 3.0
        assert hierarchy_hamiltonian(state, 2) == pytest.approx(
            hamiltonian_trace_power(state, 2) + shift, rel=1e-12
        )

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_rational_limit(self, m):
        base = make_state(seed=5)
        errs = {}
        for gamma in (1e-2, 1e-3):
            s = base.replace(gamma=gamma)
            errs[gamma] = abs(
                hierarchy_hamiltonian(s, m) - np.trace(np.linalg.matrix_power(lax_rational(s), m))
            )
        assert 50.0 < errs[1e-2] / errs[1e-3] < 200.0

    def test_flow_index_validation(self, state):
        with pytest.raises(ValueError):
            hierarchy_hamiltonian(state, 0)
        with pytest.raises(ValueError):
            hierarchy_hamiltonian(state, 9)  # above the default cap


class TestGradients:
    def test_m1_gradient_is_uniform_drift(self, state):
        grad = hierarchy_gradient(state, 1)
        assert_allclose(grad.d_p, -1.0, atol=1e-14)
        assert_allclose(grad.d_x, 0.0, atol=1e-14)
        assert_allclose(grad.d_a, 0.0, atol=1e-14)
        assert_allclose(grad.d_b, 0.0, atol=1e-14)

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_matches_finite_differences(self, m):
        for seed in range(10):
            s = make_state(n=2 + seed % 3, nc=1 + seed % 3, seed=seed)
            assert gradient_fd_relative_error(s, m) <= 1e-6

    def test_m2_matches_hand_gradient(self):
        for seed in range(20):
            s = make_state(seed=seed)
            grad = hierarchy_gradient(s, 2)
            d_p, d_x, d_a, d_b = hand_second_hamiltonian_gradient(s)
            scale = max(1.0, np.max(np.abs(d_x)))
            assert np.max(np.abs(grad.d_p - d_p)) <= 1e-12 * scale
            assert np.max(np.abs(grad.d_x - d_x)) <= 1e-12 * scale
            assert np.max(np.abs(grad.d_a - d_a)) <= 1e-12 * scale
            assert np.max(np.abs(grad.d_b - d_b)) <= 1e-12 * scale


class TestFlowRhs:
    def test_m1_uniform_translation(self, state):
        t = flow_rhs(state, 1)
        assert_allclose(t.dx, -1.0, atol=1e-14)
        assert_allclose(t.dp, 0.0, atol=1e-14)
        assert_allclose(t.da, 0.0, atol=1e-14)
        assert_allclose(t.db, 0.0, atol=1e-14)

    def test_m2_equals_explicit_form(self):
        for seed in range(30):
            s = make_state(n=2 + seed % 3, nc=1 + seed % 3, gamma=0.3 + 0.2 * (seed % 4), seed=seed)
            t1 = flow_rhs(s, 2)
            t2 = explicit_second_flow_rhs(s)
            for lhs, rhs in ((t1.dx, t2.dx), (t1.dp, t2.dp), (t1.da, t2.da), (t1.db, t2.db)):
                assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_single_particle_is_free(self):
        s = sc.SpinState(1.0, [0.3], [0.4], [[1.0, 0.0]], [[1.0, 0.5]])
        t = explicit_second_flow_rhs(s)
        assert_allclose(t.dx, [0.8])
        assert_allclose(t.dp, 0.0)
        assert_allclose(t.da, 0.0)
        assert_allclose(t.db, 0.0)

    def test_spinless_two_particle_force(self):
        g = 0.7
        s = sc.SpinState(g, [-0.6, 0.9], [0.2, -0.1], [[1.0], [1.0]], [[1.0], [1.0]])
        t = explicit_second_flow_rhs(s)
        d = s.x[0] - s.x[1]
        force = -8.0 * g**3 * np.cosh(g * d) / np.sinh(g * d) ** 3
        assert t.dp[0] == pytest.approx(force / 2.0, rel=1e-13)
        assert t.dp[1] == pytest.approx(-force / 2.0, rel=1e-13)

    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
    def test_pairing_conserved_at_rhs_level(self, m):
        for seed in range(10):
            s = make_state(n=2 + seed % 3, nc=1 + seed % 3, seed=seed)
            t = flow_rhs(s, m)
            contraction = np.einsum("ic,ic->i", s.b, t.da) + np.einsum("ic,ic->i", s.a, t.db)
            assert np.max(np.abs(contraction)) <= 1e-12


class TestPoleVelocityResidue:
    def test_m1_uniform(self, state):
        for i in range(state.n_particles):
            assert pole_velocity_from_residue(state, 1, i) == pytest.approx(-1.0, rel=1e-13)

    def test_single_particle_m2(self):
        s = sc.SpinState(1.0, [0.3], [0.47], [[1.0]], [[1.0]])
        assert pole_velocity_from_residue(s, 2, 0) == pytest.approx(2 * 0.47, rel=1e-13)

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_matches_gradient(self, m):
        for seed in range(20):
            s = make_state(n=2 + seed % 3, nc=1 + seed % 3, seed=seed)
            grad = hierarchy_gradient(s, m)
            for i in range(s.n_particles):
                got = pole_velocity_from_residue(s, m, i)
                assert abs(got - grad.d_p[i]) <= 1e-9 * max(1.0, abs(grad.d_p[i]))


class TestIntegrate:
    def test_m1_exact_translation(self, gentle_state):
        traj = integrate(gentle_state, FlowSpec(m=1, t_end=0.7, dt=1e-2))
        final = traj.samples[-1][1]
        assert_allclose(final.x, gentle_state.x - 0.7, atol=1e-12)
        assert_allclose(final.p, gentle_state.p, atol=1e-14)
        assert_allclose(final.a, gentle_state.a, atol=1e-14)

    def test_m2_energy_drift_budget(self):
        s = make_state(n=2, nc=2, seed=3, gentle=True)
        traj = integrate(s, FlowSpec(m=2, t_end=1.0, dt=1e-3, record_every=100))
        h0 = hamiltonian_trace_power(s, 2)
        drift = max(abs(hamiltonian_trace_power(st, 2) - h0) for st in traj.states)
        assert drift / max(1.0, abs(h0)) <= 1e-8

    def test_reversibility(self, gentle_state):
        spec = FlowSpec(m=2, t_end=0.5, dt=1e-3)
        fwd = integrate(gentle_state, spec).samples[-1][1]
        back = integrate(fwd, spec, direction=-1).samples[-1][1]
        assert np.max(np.abs(pack_coordinates(back) - pack_coordinates(gentle_state))) <= 1e-7

    def test_record_every_and_times(self, gentle_state):
        traj = integrate(gentle_state, FlowSpec(m=1, t_end=0.1, dt=1e-2, record_every=4))
        assert traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(0.1)
        assert np.all(np.diff(traj.times) > 0)

    def test_collision_raises(self):
        # head-on momenta force a collision under the attractive interaction
        s = sc.SpinState(1.0, [-0.35, 0.35], [1.5, -1.5], np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises((SingularConfigurationError, ConstraintViolationError)):
            integrate(s, FlowSpec(m=2, t_end=1.0, dt=1e-3))

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            FlowSpec(m=0, t_end=1.0, dt=1e-3)
        with pytest.raises(ValueError):
            FlowSpec(m=2, t_end=1.0, dt=2.0)
        with pytest.raises(ValueError):
            FlowSpec(m=2, t_end=1.0, dt=1e-3, record_every=0)


class TestConservation:
    def test_m2_run_report(self, gentle_state):
        traj = integrate(gentle_state, FlowSpec(m=2, t_end=1.0, dt=1e-3, record_every=100))
        rep = conservation_report(traj, k_max=4, tol=1e-8)
        assert rep.passed, rep.failed_names()

    def test_spin_moment_drift(self, gentle_state):
        traj = integrate(gentle_state, FlowSpec(m=2, t_end=1.0, dt=1e-3, record_every=100))
        mom0 = gentle_state.spin_moment()
        drift = max(np.max(np.abs(s.spin_moment() - mom0)) for s in traj.states)
        assert drift <= 1e-8

    def test_single_particle_machine_precision(self):
        s = sc.SpinState(1.0, [0.1], [0.4], [[1.0, 0.3]], [[0.7, 1.0]], constraint_tol=1e-6)
        s = sc.SpinState(1.0, [0.1], [0.4], [[1.0, 0.3]], np.array([[0.7, 1.0]]) / (0.7 + 0.3))
        traj = integrate(s, FlowSpec(m=2, t_end=1.0, dt=1e-2))
        rep = conservation_report(traj, k_max=4, tol=1e-14)
        assert rep.passed

    def test_isospectral_drift(self, gentle_state):
        traj = integrate(gentle_state, FlowSpec(m=3, t_end=1.0, dt=1e-3, record_every=100))
        L0 = lax_matrix(gentle_state)
        drift = max(spectrum_drift(L0, lax_matrix(s)) for s in traj.states)
        assert drift <= 1e-7

    def test_sorted_spectrum_shape(self, state):
        lam = sorted_spectrum(lax_matrix(state))
        assert lam.shape == (state.n_particles,)


class TestLaxEquation:
    def test_fd_time_derivative_matches_commutator(self, gentle_state):
        delta = 1e-5
        spec = FlowSpec(m=2, t_end=delta, dt=delta)
        lp = lax_matrix(integrate(gentle_state, spec).samples[-1][1])
        lm = lax_matrix(integrate(gentle_state, spec, direction=-1).samples[-1][1])
        ldot = (lp - lm) / (2.0 * delta)
        L = lax_matrix(gentle_state)
        M = m_matrix(gentle_state)
        assert np.max(np.abs(ldot - (M @ L - L @ M))) <= 1e-6


class TestFlowCommutativity:
    def test_gauge_normalized_composition(self):
        worst = 0.0
        for seed in range(5):
            s = make_state(seed=100 + seed, gentle=True)
            ab = flow_map(flow_map(s, 2, 0.1), 3, 0.1)
            ba = flow_map(flow_map(s, 3, 0.1), 2, 0.1)
            d = np.max(
                np.abs(pack_coordinates(gauge_normalize(ab)) - pack_coordinates(gauge_normalize(ba)))
            )
            worst = max(worst, d)
        assert worst <= 1e-6

    def test_commutator_defect_is_pure_gauge(self):
        # raw spin coordinates may differ by a per-site rescaling only:
        # positions, momenta and pairings agree without normalization
        s = make_state(seed=114, gentle=True)
        ab = flow_map(flow_map(s, 2, 0.1), 3, 0.1)
        ba = flow_map(flow_map(s, 3, 0.1), 2, 0.1)
        assert np.max(np.abs(ab.x - ba.x)) <= 1e-9
        assert np.max(np.abs(ab.p - ba.p)) <= 1e-9
        ratio = ab.a / ba.a  # constant per row when the defect is a gauge factor
        assert np.max(np.abs(ratio - ratio[:, :1])) <= 1e-9
