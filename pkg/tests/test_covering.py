import numpy as np
import pytest

from mcgehee import covering as cov
from mcgehee import integrate as ode
from mcgehee.model import DomainError, ModelParams, PhasePoint, hamiltonian, vector_field

TIGHT = ode.IntegratorConfig(rel_tol=1e-12, abs_tol=1e-13)


def physical_trajectory(params, x0, t_span, cfg=TIGHT):
    d = params.d

    def field(t, y):
        dq, dp = vector_field(params, PhasePoint(y[:d], y[d:]))
        return np.concatenate([dq, dp])

    return ode.integrate(field, np.concatenate([x0.q, x0.p]), t_span, cfg)


class TestPlaneReduction:
    def test_roundtrip(self):
        x = PhasePoint(np.array([0.3, -0.1, 0.2]), np.array([1.0, 2.0, -0.5]))
        frame, qc, pc = cov.plane_reduce(x)
        back = cov.plane_embed(frame, qc, pc)
        assert np.allclose(back.q, x.q, atol=1e-14)
        assert np.allclose(back.p, x.p, atol=1e-14)

    def test_qc_real_positive(self):
        x = PhasePoint(np.array([0.3, -0.1, 0.2]), np.array([1.0, 2.0, -0.5]))
        _, qc, _ = cov.plane_reduce(x)
        assert qc.imag == pytest.approx(0.0, abs=1e-15)
        assert qc.real == pytest.approx(x.r)

    def test_collinear_states_get_deterministic_frame(self):
        x = PhasePoint(np.array([0.5, 0.0]), np.array([-2.0, 0.0]))
        assert cov.is_collinear(x)
        frame, qc, pc = cov.plane_reduce(x)
        assert np.isfinite(frame.e2).all()
        assert abs(np.dot(frame.e1, frame.e2)) < 1e-14
        # repeatable
        frame2, _, _ = cov.plane_reduce(x)
        assert np.array_equal(frame.e2, frame2.e2)

    def test_nearly_radial_is_collinear(self):
        x = PhasePoint(np.array([0.05, 0.0]), np.array([-6.0, 6e-9]))
        assert cov.is_collinear(x)

    def test_generic_state_not_collinear(self):
        x = PhasePoint(np.array([0.05, 0.0]), np.array([-6.0, 1.0]))
        assert not cov.is_collinear(x)


class TestLiftProject:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_lift_project_roundtrip(self, n):
        params = ModelParams(n=n, d=2)
        qc, pc = 0.05 + 0.0j, complex(-3.0, 2.0)
        for branch in range(n):
            Q, P = cov.lift(params, qc, pc, branch)
            qc2, pc2 = cov.project(params, Q, P)
            assert abs(qc2 - qc) < 1e-14
            assert abs(pc2 - pc) < 1e-12 * abs(pc)

    def test_branches_are_distinct_preimages(self):
        params = ModelParams(n=3, d=2)
        Qs = {cov.lift(params, 0.05 + 0.0j, 1.0 + 0.0j, b)[0] for b in range(3)}
        assert len(Qs) == 3

    def test_lift_at_branch_point_rejected(self):
        params = ModelParams(n=2, d=2)
        with pytest.raises(DomainError):
            cov.lift(params, 0.0j, 1.0 + 0.0j)

    def test_constraint_vanishes_on_energy_shell(self):
        params = ModelParams(n=3, d=2)
        x = PhasePoint(np.array([0.05, 0.01]), np.array([-6.0, 8.0]))
        frame, qc, pc = cov.plane_reduce(x)
        Q, P = cov.lift(params, qc, pc)
        E = hamiltonian(params, x)
        state = cov.CoveringState(Q=Q, P=P, t_phys=0.0, E=E)
        assert state.constraint(params) == pytest.approx(0.0, abs=1e-10)


class TestCoveringFlow:
    def test_retimed_covering_matches_physical_flow(self):
        # the C_N calibration oracle: integrate the same Kepler arc in
        # covering time and in physical time and compare pointwise
        params = ModelParams(n=2, d=2, eps=0.5)
        x0 = PhasePoint(np.array([0.3, 0.05]), np.array([-2.5, 1.5]))
        E = hamiltonian(params, x0)
        frame, qc, pc = cov.plane_reduce(x0)
        Q0, P0 = cov.lift(params, qc, pc)
        traj = cov.integrate_covering(
            params, E, cov.covering_state_y(Q0, P0), (0.0, 0.2), TIGHT
        )
        phys = physical_trajectory(params, x0, (0.0, float(traj.ys[-1][4]) + 0.01))
        for y in traj.ys[1::3]:
            state = cov.y_to_state(y, E)
            qc_t, pc_t = cov.project(params, state.Q, state.P)
            x_cov = cov.plane_embed(frame, qc_t, pc_t)
            y_phys = phys(state.t_phys)
            assert np.allclose(x_cov.q, y_phys[:2], atol=1e-8)
            assert np.allclose(x_cov.p, y_phys[2:], atol=1e-8)

    def test_free_case_covering_is_straight_line(self):
        params = ModelParams(n=1, d=2)
        field = cov.covering_field(params, E=0.3)
        rates = field(0.0, np.array([0.1, 0.2, 1.0, -2.0, 0.0]))
        assert rates[2] == 0.0 and rates[3] == 0.0
        assert rates[4] == 1.0  # physical time runs at unit rate

    def test_constraint_conserved_along_flow(self):
        params = ModelParams(n=3, d=2, eps=0.2)
        x0 = PhasePoint(np.array([0.05, 0.02]), np.array([-7.0, 9.0]))
        E = hamiltonian(params, x0)
        frame, qc, pc = cov.plane_reduce(x0)
        Q0, P0 = cov.lift(params, qc, pc)
        traj = cov.integrate_covering(
            params, E, cov.covering_state_y(Q0, P0), (0.0, 0.5), TIGHT
        )
        for y in traj.ys:
            state = cov.y_to_state(y, E)
            assert abs(state.constraint(params)) < 1e-10

    def test_energy_preserved_through_projection(self):
        params = ModelParams(n=2, d=2, eps=0.2)
        x0 = PhasePoint(np.array([0.08, 0.0]), np.array([-4.0, 2.0]))
        E = hamiltonian(params, x0)
        frame, qc, pc = cov.plane_reduce(x0)
        Q0, P0 = cov.lift(params, qc, pc)
        traj = cov.integrate_covering(
            params, E, cov.covering_state_y(Q0, P0), (0.0, 0.05), TIGHT
        )
        state = cov.y_to_state(traj.ys[-1], E)
        qc_t, pc_t = cov.project(params, state.Q, state.P)
        x_t = cov.plane_embed(frame, qc_t, pc_t)
        assert hamiltonian(params, x_t) == pytest.approx(E, abs=1e-9)


class TestCollisionTransit:
    def test_kepler_bounce_returns_on_same_ray(self):
        params = ModelParams(n=2, d=2, eps=0.1)
        x_in = PhasePoint(np.array([0.05, 0.0]), np.array([-6.0, 0.0]))
        x_out, dt = cov.flow_through_collision(params, x_in)
        assert dt > 0.0
        assert x_out.r == pytest.approx(x_in.r, abs=1e-10)
        # even n: the particle bounces back along the incoming ray
        assert np.dot(x_out.q, x_in.q) > 0.0
        assert np.dot(x_out.p, x_in.p) < 0.0
        assert hamiltonian(params, x_out) == pytest.approx(
            hamiltonian(params, x_in), abs=1e-8
        )

    def test_odd_n_passes_through_to_antipode(self):
        params = ModelParams(n=3, d=2, eps=0.1)
        x_in = PhasePoint(np.array([0.05, 0.0]), np.array([-6.0, 0.0]))
        x_out, dt = cov.flow_through_collision(params, x_in)
        assert np.dot(x_out.q, x_in.q) < 0.0  # antipodal exit ray
        assert hamiltonian(params, x_out) == pytest.approx(
            hamiltonian(params, x_in), abs=1e-8
        )

    def test_transit_time_below_uniform_bound(self):
        for n in (2, 3, 4):
            params = ModelParams(n=n, d=2, eps=0.1)
            x_in = PhasePoint(np.array([0.1 * (1 - 1e-12), 0.0]), np.array([-6.0, 0.0]))
            _, dt = cov.flow_through_collision(params, x_in)
            bound = 2.0 * params.eps ** (2.0 - 1.0 / n) * np.sqrt(n * params.m / params.Z)
            assert dt <= bound

    def test_backward_direction(self):
        params = ModelParams(n=2, d=2, eps=0.1)
        # moving outward: a collision lies in the past
        x = PhasePoint(np.array([0.05, 0.0]), np.array([6.0, 0.0]))
        x_past, dt = cov.flow_through_collision(params, x, direction="backward")
        assert dt > 0.0
        assert x_past.r == pytest.approx(x.r, abs=1e-10)

    def test_rejects_non_collision_state(self):
        params = ModelParams(n=2, d=2, eps=0.1)
        x = PhasePoint(np.array([0.05, 0.0]), np.array([-6.0, 2.0]))
        with pytest.raises(DomainError):
            cov.flow_through_collision(params, x)

    def test_rejects_outgoing_state(self):
        params = ModelParams(n=2, d=2, eps=0.1)
        x = PhasePoint(np.array([0.05, 0.0]), np.array([6.0, 0.0]))
        with pytest.raises(DomainError):
            cov.flow_through_collision(params, x, direction="forward")
