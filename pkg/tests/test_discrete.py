import numpy as np
import pytest
from numpy.testing import assert_allclose

import spincm as sc
from spincm.discrete import (
    DiscreteLevel,
    DiscreteSpec,
    DiscreteTrajectory,
    discrete_eom_residual,
    discrete_lax_residual,
    discrete_lax_scale,
    discrete_linear_problem_residual,
    discrete_m_matrix,
    discrete_m_matrix_exponential_form,
    discrete_residual,
    discrete_step,
    run_discrete,
)
from spincm.errors import NewtonConvergenceError, SingularConfigurationError
from spincm.flows import explicit_second_flow_rhs, spectrum_drift
from spincm.kp import default_spectral_point, default_w_samples

from conftest import make_state


def single_pole_level(gamma=1.0, x=0.3, xdot=0.8):
    return DiscreteLevel(gamma, [x], [[1.0]], [[1.0]], [xdot])


def analytic_single_pole_shift(gamma, xdot, mu):
    """Scalar relation: gamma * coth(gamma * u) = xdot/2 + mu, so
    u = arccoth((xdot/2 + mu)/gamma) / gamma."""
    s = (0.5 * xdot + mu) / gamma
    return 0.5 * np.log((s + 1.0) / (s - 1.0)) / gamma


class TestLevels:
    def test_from_state_uses_double_momentum(self, state):
        lev = DiscreteLevel.from_state(state)
        assert_allclose(lev.xdot, 2.0 * state.p)
        assert_allclose(np.diag(lev.lax_matrix()), -state.p)

    def test_invalid_level_rejected(self):
        with pytest.raises(SingularConfigurationError):
            DiscreteLevel(1.0, [0.0, 1e-9], [[1.0], [1.0]], [[1.0], [1.0]], [0.0, 0.0])

    def test_spec_rejects_small_mu(self):
        with pytest.raises(ValueError):
            DiscreteSpec(mu=0.5)
        DiscreteSpec(mu=-5.0)  # negative flows are allowed beyond the floor


class TestIntertwiningMatrix:
    def test_single_pole_value(self):
        g, dx = 0.8, 0.01
        cur = single_pole_level(gamma=g, x=0.0)
        nxt = single_pole_level(gamma=g, x=dx)
        expect = g / np.sinh(g * dx)
        assert_allclose(discrete_m_matrix(nxt, cur), [[expect]], rtol=1e-13)

    def test_forms_agree(self):
        s = make_state(n=3, nc=2, seed=8)
        cur = DiscreteLevel.from_state(s)
        nxt = discrete_step(cur, DiscreteSpec(mu=200.0))
        m1 = discrete_m_matrix(nxt, cur)
        m2 = discrete_m_matrix_exponential_form(nxt, cur)
        assert np.max(np.abs(m1 - m2)) <= 1e-12 * (1.0 + np.max(np.abs(m1)))

    def test_near_diagonal_dominance_toward_continuum(self):
        s = make_state(n=2, nc=2, seed=3, gentle=True)
        cur = DiscreteLevel.from_state(s)
        nxt = discrete_step(cur, DiscreteSpec(mu=1e3))
        m = discrete_m_matrix(nxt, cur)
        g = cur.gamma
        for i in range(2):
            dom = g / np.sinh(g * (nxt.x[i] - cur.x[i]))
            assert m[i, i] == pytest.approx(dom, rel=1e-10)
            assert abs(m[i, i]) > 50.0 * np.max(np.abs(m[i, ~np.eye(2, dtype=bool)[i]]))

    def test_cross_level_collision_rejected(self):
        cur = single_pole_level(x=0.3)
        nxt = single_pole_level(x=0.3)
        with pytest.raises(SingularConfigurationError):
            discrete_m_matrix(nxt, cur)


class TestResidual:
    def test_zero_on_exact_single_pole_data(self):
        g, xdot, mu = 1.0, 0.8, 50.0
        cur = single_pole_level(gamma=g, xdot=xdot)
        u = analytic_single_pole_shift(g, xdot, mu)
        nxt = single_pole_level(gamma=g, x=cur.x[0] + u, xdot=xdot)
        r = discrete_residual(cur, nxt, DiscreteSpec(mu=mu))
        assert r.shape == (4,)
        assert np.max(np.abs(r)) <= 1e-12

    def test_block_layout_and_size(self):
        s = make_state(n=3, nc=2, seed=4)
        cur = DiscreteLevel.from_state(s)
        nxt = discrete_step(cur, DiscreteSpec(mu=100.0))
        r = discrete_residual(cur, nxt, DiscreteSpec(mu=100.0))
        n, nc = 3, 2
        assert r.size == n * (2 * nc + 2)

    def test_directional_linearity(self):
        # finite-difference Jacobian check: the residual responds linearly
        # to a small perturbation of one next-level spin entry
        s = make_state(n=2, nc=2, seed=5)
        cur = DiscreteLevel.from_state(s)
        spec = DiscreteSpec(mu=100.0)
        nxt = discrete_step(cur, spec)
        base = discrete_residual(cur, nxt, spec)

        def perturbed(eps):
            a = np.array(nxt.a)
            a[1, 0] += eps
            lev = DiscreteLevel(nxt.gamma, nxt.x, a, nxt.b, nxt.xdot, constraint_tol=1.0)
            return discrete_residual(cur, lev, spec)

        d1 = (perturbed(1e-6) - base) / 1e-6
        d2 = (perturbed(2e-6) - base) / 2e-6
        mask = np.abs(d1) > 1e-6
        assert np.allclose(d1[mask], d2[mask], rtol=1e-4)

    def test_spinless_reduction_matches_scalar_relation(self):
        # with all spin entries equal to one, the first block collapses to
        # gamma*sum_k coth(g(x'_k - x_i)) - gamma*sum_{k!=i} coth(g(x_k - x_i))
        # - xdot_i/2 - mu
        g, mu = 0.9, 120.0
        rng = np.random.default_rng(2)
        x = np.array([-1.1, 0.2, 1.4])
        xdot = rng.normal(scale=0.3, size=3)
        cur = DiscreteLevel(g, x, np.ones((3, 1)), np.ones((3, 1)), xdot)
        spec = DiscreteSpec(mu=mu)
        nxt = discrete_step(cur, spec)
        r = discrete_residual(cur, nxt, spec)
        for i in range(3):
            fwd = g * np.sum(1.0 / np.tanh(g * (nxt.x - x[i])))
            same = g * sum(1.0 / np.tanh(g * (x[k] - x[i])) for k in range(3) if k != i)
            scalar = fwd - same - 0.5 * xdot[i] - mu
            assert r[i] == pytest.approx(scalar, abs=1e-10)


class TestStep:
    def test_single_pole_matches_closed_form(self):
        g, xdot, mu = 1.0, 0.8, 100.0
        cur = single_pole_level(gamma=g, xdot=xdot)
        nxt = discrete_step(cur, DiscreteSpec(mu=mu))
        u_exact = analytic_single_pole_shift(g, xdot, mu)
        assert nxt.x[0] - cur.x[0] == pytest.approx(u_exact, abs=1e-12)
        assert nxt.xdot[0] == pytest.approx(xdot, abs=1e-10)
        assert_allclose(nxt.a, cur.a, atol=1e-12)
        assert_allclose(nxt.b, cur.b, atol=1e-12)

    def test_leading_shift_is_inverse_mu_for_any_color_count(self):
        # the one-step pole translation is 1/mu to leading order,
        # independent of the number of colors
        for nc in (1, 2, 3):
            s = make_state(n=2, nc=nc, seed=11, p_scale=0.5)
            cur = DiscreteLevel.from_state(s)
            nxt = discrete_step(cur, DiscreteSpec(mu=1e3))
            shift = nxt.x - cur.x
            assert np.max(np.abs(shift * 1e3 - 1.0)) < 2e-3

    def test_mu_refinement_second_order(self):
        s = make_state(n=2, nc=2, seed=11, p_scale=0.5)
        cur = DiscreteLevel.from_state(s)
        errs = {}
        for mu in (1e2, 1e3, 1e4):
            spec = DiscreteSpec(mu=mu, newton_tol=1e-12 if mu < 5e3 else 1e-11)
            nxt = discrete_step(cur, spec)
            errs[mu] = np.max(np.abs((nxt.x - cur.x) - 1.0 / mu))
        assert 50.0 < errs[1e2] / errs[1e3] < 200.0
        assert 50.0 < errs[1e3] / errs[1e4] < 200.0

    def test_lax_certificate_after_step(self):
        s = make_state(n=2, nc=2, seed=23, p_scale=0.3, min_gap=1.5, spacing=2.0)
        cur = DiscreteLevel.from_state(s)
        nxt = discrete_step(cur, DiscreteSpec(mu=1e3))
        assert discrete_lax_residual(cur, nxt) <= 1e-9

    def test_negative_control_unrelated_levels(self):
        a = DiscreteLevel.from_state(make_state(seed=1))
        b = DiscreteLevel.from_state(make_state(seed=2))
        assert discrete_lax_residual(a, b) / discrete_lax_scale(a, b) > 1e-3

    def test_spectrum_preserved(self):
        s = make_state(n=2, nc=2, seed=23, p_scale=0.3, min_gap=1.5, spacing=2.0)
        traj = run_discrete(DiscreteLevel.from_state(s), DiscreteSpec(mu=1e3), 10)
        lax0 = traj.levels[0].lax_matrix()
        assert max(spectrum_drift(lax0, lv.lax_matrix()) for lv in traj.levels) <= 1e-8

    def test_nonconvergence_raises_with_residual(self):
        s = make_state(n=3, nc=2, seed=4)
        cur = DiscreteLevel.from_state(s)
        with pytest.raises(NewtonConvergenceError) as err:
            discrete_step(cur, DiscreteSpec(mu=100.0, newton_tol=1e-30, newton_max_iter=2))
        assert err.value.last_residual is not None

    def test_run_returns_trajectory_with_info(self):
        s = make_state(n=2, nc=2, seed=3, gentle=True)
        traj = run_discrete(DiscreteLevel.from_state(s), DiscreteSpec(mu=500.0), 4)
        assert isinstance(traj, DiscreteTrajectory)
        assert len(traj) == 5
        assert all(info["residual"] <= 1e-12 for info in traj.step_info)


class TestThreeLevelEquation:
    def test_interior_residual_small(self):
        s = make_state(n=2, nc=2, seed=2, p_scale=0.3, min_gap=1.5, spacing=2.0)
        traj = run_discrete(DiscreteLevel.from_state(s), DiscreteSpec(mu=1e3), 4)
        L = traj.levels
        for i in (1, 2, 3):
            r = discrete_eom_residual(L[i - 1], L[i], L[i + 1])
            assert r.shape == (2,)
            assert np.max(np.abs(r)) <= 1e-9

    def test_spinless_identity_form(self):
        # one-color levels reduce the equation to pure coth sums
        g, mu = 1.0, 300.0
        x = np.array([-1.0, 0.9])
        cur = DiscreteLevel(g, x, np.ones((2, 1)), np.ones((2, 1)), np.array([0.4, -0.2]))
        traj = run_discrete(cur, DiscreteSpec(mu=mu), 2)
        lev_p, lev_c, lev_n = traj.levels
        for i in range(2):
            fwd = np.sum(1.0 / np.tanh(g * (lev_c.x[i] - lev_n.x)))
            bwd = np.sum(1.0 / np.tanh(g * (lev_c.x[i] - lev_p.x)))
            same = sum(
                1.0 / np.tanh(g * (lev_c.x[i] - lev_c.x[j])) for j in range(2) if j != i
            )
            assert fwd + bwd - 2.0 * same == pytest.approx(0.0, abs=1e-9)

    def test_negative_control(self):
        a = DiscreteLevel.from_state(make_state(seed=1))
        b = DiscreteLevel.from_state(make_state(seed=2))
        c = DiscreteLevel.from_state(make_state(seed=3))
        assert np.max(np.abs(discrete_eom_residual(a, b, c))) > 1e-3

    def test_continuum_limit_recovers_force(self):
        s = make_state(n=2, nc=2, seed=11, p_scale=0.5)
        force = 2.0 * explicit_second_flow_rhs(s).dp  # second time derivative of x
        cur = DiscreteLevel.from_state(s)
        rel = {}
        for mu in (50.0, 100.0, 200.0, 400.0):
            traj = run_discrete(cur, DiscreteSpec(mu=mu), 2)
            x0, x1, x2 = (lv.x for lv in traj.levels)
            second = (x2 - 2.0 * x1 + x0) * 4.0 * mu**4
            rel[mu] = np.max(np.abs(second - force)) / np.max(np.abs(force))
        # error decays like 1/mu: halves (roughly) with each doubling
        for lo, hi in ((50.0, 100.0), (100.0, 200.0), (200.0, 400.0)):
            assert 1.5 < rel[lo] / rel[hi] < 3.0


class TestLinearProblem:
    def test_converged_step_residual(self):
        s = make_state(n=2, nc=2, seed=2, p_scale=0.3, min_gap=1.5, spacing=2.0)
        spec = DiscreteSpec(mu=1e3)
        traj = run_discrete(DiscreteLevel.from_state(s), spec, 1)
        z = default_spectral_point(s) + 1.0
        samples = default_w_samples(s, 8)
        r = discrete_linear_problem_residual(traj.levels[0], traj.levels[1], z, samples, spec)
        assert r <= 1e-8

    def test_single_pole_closed_form(self):
        spec = DiscreteSpec(mu=200.0)
        cur = single_pole_level()
        nxt = discrete_step(cur, spec)
        z = default_spectral_point(cur.to_state()) + 0.5
        r = discrete_linear_problem_residual(cur, nxt, z, [3.0, 9.0], spec)
        assert r <= 1e-12

    def test_perturbation_sensitivity(self):
        spec = DiscreteSpec(mu=200.0)
        cur = single_pole_level()
        nxt = discrete_step(cur, spec)
        z = default_spectral_point(cur.to_state()) + 0.5
        base = discrete_linear_problem_residual(cur, nxt, z, [3.0, 9.0], spec)

        def res_for(eps):
            bad = DiscreteLevel(
                nxt.gamma, nxt.x + eps, nxt.a, nxt.b, nxt.xdot, constraint_tol=1.0
            )
            return discrete_linear_problem_residual(cur, bad, z, [3.0, 9.0], spec)

        r1, r2 = res_for(1e-6), res_for(2e-6)
        assert r1 > 100.0 * max(base, 1e-14)
        assert r2 / r1 == pytest.approx(2.0, rel=0.05)
