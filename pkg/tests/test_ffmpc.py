import numpy as np
import pytest

from trajtrack import (
    ConstraintSet,
    FfWeights,
    InputHistory,
    ModelParams,
    ReferenceTrajectory,
    StateBound,
    VehicleState,
    augment_reference,
    build_constraints,
    build_cost,
    check_strict_convexity,
    condense,
    difference_matrix,
    optimize_trajectory,
)
from trajtrack.ffmpc import assemble_qp
from trajtrack.vehicle import linearize


def rollout_oracle(A_seq, B, x0, u_seq):
    """Step-by-step LTV iteration, the independent check for condensing."""
    states = [np.asarray(x0, dtype=float)]
    for A, u in zip(A_seq, u_seq):
        states.append(A @ states[-1] + B @ u)
    return np.concatenate(states)


def direct_differences(u_seq, history, order):
    """i-th order differences of the input sequence computed by repeated
    differencing of the extended sequence (stored history in front, zero
    fill beyond it)."""
    history = np.asarray(history, dtype=float).reshape(-1, 2)
    kept = history[history.shape[0] - min(order, history.shape[0]):]
    pad = np.zeros((max(order - kept.shape[0], 0), 2))
    ext = np.vstack([pad, kept, u_seq])
    n_hist = ext.shape[0] - u_seq.shape[0]
    d = ext.copy()
    for _ in range(order):
        d = d - np.vstack([np.zeros((1, 2)), d[:-1]])
    return d[n_hist:]


def random_A_seq(rng, n):
    return [np.eye(6) + 0.1 * rng.normal(size=(6, 6)) for _ in range(n)]


class TestCondense:
    def test_single_step_stack(self, params):
        A, B = linearize(VehicleState(v=12.0, theta=0.2), params)
        cd = condense([A], B)
        assert np.array_equal(cd.bigA[:6], np.eye(6))
        assert np.array_equal(cd.bigA[6:], A)
        assert np.array_equal(cd.bigB[:6], np.zeros((6, 2)))
        assert np.array_equal(cd.bigB[6:], B)

    def test_identity_transitions_collapse_products(self, params):
        _, B = linearize(VehicleState(), params)
        n = 4
        cd = condense([np.eye(6)] * n, B)
        for k in range(1, n + 1):
            for j in range(n):
                block = cd.bigB[k * 6 : (k + 1) * 6, j * 2 : (j + 1) * 2]
                assert np.array_equal(block, B if j < k else np.zeros((6, 2)))

    def test_batch_rollout_matches_stepwise(self, params):
        rng = np.random.default_rng(3)
        _, B = linearize(VehicleState(), params)
        for _ in range(10):
            A_seq = random_A_seq(rng, 3)
            x0 = rng.normal(size=6)
            u = rng.normal(size=(3, 2))
            cd = condense(A_seq, B)
            batch = cd.bigA @ x0 + cd.bigB @ u.reshape(-1)
            assert np.max(np.abs(batch - rollout_oracle(A_seq, B, x0, u))) < 1e-12

    def test_structural_invariants(self, params):
        rng = np.random.default_rng(4)
        cd = condense(random_A_seq(rng, 5), linearize(VehicleState(), params)[1])
        assert np.array_equal(cd.bigA[:6], np.eye(6))
        assert np.array_equal(cd.bigB[:6], np.zeros((6, 10)))
        for k in range(6):  # block upper triangle of bigB is zero
            assert np.array_equal(cd.bigB[k * 6 : (k + 1) * 6, k * 2 :], np.zeros((6, 10 - k * 2)))


class TestDifferenceMatrix:
    def test_printed_two_step_form(self):
        E = difference_matrix(2)
        expected = np.block(
            [[np.eye(2), np.zeros((2, 2))], [-np.eye(2), np.eye(2)]]
        )
        assert np.array_equal(E, expected)

    def test_constant_sequence_telescopes(self):
        E = difference_matrix(5)
        u = np.tile([0.3, -1.2], 5)
        result = E @ u
        assert np.allclose(result[:2], [0.3, -1.2], atol=0)
        assert np.allclose(result[2:], 0.0, atol=0)

    def test_powers_match_repeated_differencing(self):
        rng = np.random.default_rng(8)
        n = 6
        E = difference_matrix(n)
        u = rng.normal(size=(n, 2))
        for order in (1, 2, 3, n):
            direct = direct_differences(u, np.zeros((0, 2)), order)
            via_powers = (np.linalg.matrix_power(E, order) @ u.reshape(-1)).reshape(n, 2)
            assert np.max(np.abs(via_powers - direct)) < 1e-12


class TestBuildCost:
    def _random_setup(self, rng, n_steps, order, params):
        A_seq = random_A_seq(rng, n_steps)
        _, B = linearize(VehicleState(), params)
        cd = condense(A_seq, B)
        q_diag = rng.uniform(0, 5, 6)
        q_diag[rng.integers(0, 6)] = 0.0  # zero tracking weights are allowed
        r_diags = [rng.uniform(0.05, 2.0, 2) for _ in range(order + 1)]
        w = FfWeights.from_diagonals(q_diag, r_diags, n_steps)
        tau = augment_reference(
            ReferenceTrajectory(rng.normal(size=(n_steps + 1, 4)), params.dt)
        )
        x0 = rng.normal(size=6)
        hist = InputHistory(rng.normal(size=(order, 2))) if order else InputHistory.cold_start()
        return cd, x0, tau, w, hist, A_seq, B

    def test_degenerate_weights_give_identity_cost(self, params):
        _, B = linearize(VehicleState(), params)
        n = 3
        cd = condense([np.eye(6)] * n, B)
        w = FfWeights(np.zeros((6 * (n + 1),) * 2), (np.eye(2 * n),))
        tau = augment_reference(ReferenceTrajectory(np.zeros((n + 1, 4)), params.dt))
        H, F, Y = build_cost(cd, np.zeros(6), tau, w, InputHistory.cold_start())
        assert np.array_equal(H, np.eye(2 * n))
        assert np.array_equal(F, np.zeros(2 * n))
        assert Y == 0.0

    def test_zero_history_leaves_only_tracking_term_in_gradient(self, params):
        rng = np.random.default_rng(12)
        cd, x0, tau, w, _, _, _ = self._random_setup(rng, 4, 1, params)
        hist = InputHistory.from_last_input(np.zeros(2))
        _, F, _ = build_cost(cd, x0, tau, w, hist)
        residual = cd.bigA @ x0 - tau.stacked()
        tracking_only = cd.bigB.T @ (w.Q @ residual)
        assert np.max(np.abs(F - tracking_only)) < 1e-12

    @pytest.mark.parametrize("order", [0, 1, 2, 3])
    def test_quadratic_form_matches_direct_evaluation(self, params, order):
        rng = np.random.default_rng(100 + order)
        for _ in range(12):
            n_steps = int(rng.integers(2, 7))
            cd, x0, tau, w, hist, A_seq, B = self._random_setup(rng, n_steps, order, params)
            H, F, Y = build_cost(cd, x0, tau, w, hist)
            u = rng.normal(size=(n_steps, 2))
            u_flat = u.reshape(-1)
            quad = u_flat @ H @ u_flat + 2.0 * F @ u_flat + Y

            states = rollout_oracle(A_seq, B, x0, u)
            dev = states - tau.stacked()
            direct = dev @ w.Q @ dev + u_flat @ w.R[0] @ u_flat
            for i in range(1, order + 1):
                di = direct_differences(u, hist.prev_inputs, i).reshape(-1)
                direct += di @ w.R[i] @ di
            assert quad == pytest.approx(direct, rel=1e-9)

    def test_non_pd_input_weight_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            FfWeights.from_diagonals(np.ones(6), [(0.1, 0.1), (1.0, 0.0)], 4)
        singular_r1 = np.diag(np.tile([1.0, 0.0], 4))
        with pytest.raises(ValueError, match="positive definite"):
            FfWeights(np.zeros((30, 30)), (np.eye(8), singular_r1))

    def test_indefinite_tracking_weight_rejected(self):
        Q = -np.eye(12)
        with pytest.raises(ValueError, match="semidefinite"):
            FfWeights(Q, (np.eye(2),))


class TestBuildConstraints:
    def test_benchmark_bounds_give_200_rows(self, params, five_segment_problem):
        ref, _, bounds, x0 = five_segment_problem
        tau = augment_reference(ref)
        A_seq = [linearize(VehicleState.from_array(tau.tau_hat[k]), params)[0] for k in range(50)]
        cd = condense(A_seq, linearize(VehicleState(), params)[1])
        G, h = build_constraints(bounds, cd, x0, 50)
        assert G.shape == (200, 100)
        assert h.shape == (200,)

    def test_no_bounds_give_empty_program(self, params):
        _, B = linearize(VehicleState(), params)
        cd = condense([np.eye(6)] * 3, B)
        G, h = build_constraints(ConstraintSet.unbounded(), cd, np.zeros(6), 3)
        assert G.shape == (0, 6)
        assert h.shape == (0,)

    def test_state_bound_respected_in_rollout(self, params):
        # lateral position capped below what the reference demands at one step
        ref = ReferenceTrajectory(
            np.column_stack([
                np.arange(11) * 1.0,
                np.linspace(0.0, 1.0, 11),
                np.zeros(11),
                np.full(11, 10.0),
            ]),
            params.dt,
        )
        cap = 0.35
        bounds = ConstraintSet(
            state_bounds=(StateBound(channel=1, upper=cap, steps=(10,)),)
        )
        w = FfWeights.from_diagonals([10, 10, 10, 0, 10, 0], [(0.1, 0.1)], ref.horizon)
        x0 = VehicleState.from_array(augment_reference(ref).tau_hat[0])
        plan = optimize_trajectory(ref, x0, w, bounds, params)
        assert plan.nominal.tau_ring[10, 1] <= cap + 1e-8
        # and the cap actually bites: unconstrained plan exceeds it
        free = optimize_trajectory(ref, x0, w, ConstraintSet.unbounded(), params)
        assert free.nominal.tau_ring[10, 1] > cap


class TestOptimizeTrajectory:
    def test_zero_reference_zero_start_gives_zero_plan(self, params):
        ref = ReferenceTrajectory(np.zeros((6, 4)), params.dt)
        w = FfWeights.from_diagonals([10, 10, 10, 0, 10, 0], [(0.1, 0.1), (1, 1)], 5)
        bounds = ConstraintSet(u_min=np.array([-0.1, -4.0]), u_max=np.array([0.1, 4.0]))
        plan = optimize_trajectory(ref, VehicleState(), w, bounds, params)
        assert np.max(np.abs(plan.nominal.u_ff)) < 1e-9
        assert np.max(np.abs(plan.nominal.tau_ring)) < 1e-9
        assert plan.objective == pytest.approx(0.0, abs=1e-12)

    def test_benchmark_scenario_solves_to_tolerance(self, params, five_segment_problem):
        ref, w, bounds, x0 = five_segment_problem
        plan = optimize_trajectory(ref, x0, w, bounds, params)
        stats = plan.qp_stats
        assert stats.stationarity <= 1e-8
        assert stats.primal_violation <= 1e-8
        assert stats.comp_slack <= 1e-8
        # strictly better than doing nothing (zero input is feasible)
        program, _ = assemble_qp(ref, x0, w, bounds, params, InputHistory.cold_start())
        assert plan.objective < program.Y
        assert plan.u_ff_star_first.as_array() == pytest.approx(plan.nominal.u_ff[0])

    def test_nominal_satisfies_dynamics(self, params, five_segment_problem):
        ref, w, bounds, x0 = five_segment_problem
        plan = optimize_trajectory(ref, x0, w, bounds, params)
        tau = augment_reference(ref)
        for k in range(ref.horizon):
            A, B = linearize(VehicleState.from_array(tau.tau_hat[k]), params)
            step = A @ plan.nominal.tau_ring[k] + B @ plan.nominal.u_ff[k]
            assert np.max(np.abs(step - plan.nominal.tau_ring[k + 1])) < 1e-9

    def test_doubling_smoothness_weight_never_roughens(self, params, five_segment_problem):
        ref, _, bounds, x0 = five_segment_problem

        def solve_with_r1(scale):
            w = FfWeights.from_diagonals(
                [10, 10, 10, 0, 10, 0], [(0.1, 0.1), (scale, scale)], ref.horizon
            )
            plan = optimize_trajectory(ref, x0, w, bounds, params)
            E = difference_matrix(ref.horizon)
            du = E @ plan.nominal.u_ff.reshape(-1)  # cold start: V0 = 0
            return np.linalg.norm(du)

        assert solve_with_r1(2.0) <= solve_with_r1(1.0) + 1e-10

    def test_assembled_hessian_strictly_convex(self, params):
        rng = np.random.default_rng(31)
        for _ in range(8):
            n_steps = int(rng.integers(2, 8))
            ref = ReferenceTrajectory(rng.normal(size=(n_steps + 1, 4)), params.dt)
            q = rng.uniform(0, 10, 6)
            q[3] = q[5] = 0.0
            w = FfWeights.from_diagonals(q, [rng.uniform(0.01, 1, 2), rng.uniform(0.1, 2, 2)], n_steps)
            tau = augment_reference(ref)
            A_seq = [linearize(VehicleState.from_array(tau.tau_hat[k]), params)[0] for k in range(n_steps)]
            cd = condense(A_seq, linearize(VehicleState(), params)[1])
            H, _, _ = build_cost(cd, rng.normal(size=6), tau, w, InputHistory.cold_start())
            assert check_strict_convexity(H)

    def test_warm_start_from_feasible_point_matches(self, params, five_segment_problem):
        from trajtrack.qp import solve

        ref, w, bounds, x0 = five_segment_problem
        rng = np.random.default_rng(17)
        program, _ = assemble_qp(ref, x0, w, bounds, params, InputHistory.cold_start())
        cold = solve(program)
        # random feasible point with some coordinates pushed onto their bounds
        u = rng.uniform(-0.05, 0.05, 100)
        u[1::2] = np.clip(rng.normal(0, 3, 50), -4.0, 2.5)
        on_bound = rng.choice(100, 20, replace=False)
        u[on_bound] = np.where(u[on_bound] > 0, program.h[on_bound], u[on_bound])
        tight = tuple(np.flatnonzero(np.abs(program.G_I @ u - program.h) <= 1e-9))
        warm = solve(program, initial_active=tight)
        assert np.max(np.abs(warm.x_star - cold.x_star)) < 1e-8

    def test_plain_tracking_reduction_without_difference_terms(self, params):
        rng = np.random.default_rng(41)
        n_steps = 6
        ref = ReferenceTrajectory(rng.normal(size=(n_steps + 1, 4)), params.dt)
        tau = augment_reference(ref)
        x0 = rng.normal(size=6)
        q_diag = np.array([10.0, 10, 10, 0, 10, 0])
        r0 = np.array([0.1, 0.1])
        w = FfWeights.from_diagonals(q_diag, [r0], n_steps)
        A_seq = [linearize(VehicleState.from_array(tau.tau_hat[k]), params)[0] for k in range(n_steps)]
        cd = condense(A_seq, linearize(VehicleState(), params)[1])
        H, F, Y = build_cost(cd, x0, tau, w, InputHistory.cold_start())

        # independent plain tracking-MPC assembly
        Q = np.diag(np.tile(q_diag, n_steps + 1))
        R0 = np.diag(np.tile(r0, n_steps))
        residual = cd.bigA @ x0 - tau.stacked()
        assert np.array_equal(H, R0 + cd.bigB.T @ (Q @ cd.bigB))
        assert np.array_equal(F, cd.bigB.T @ (Q @ residual))
        assert Y == residual @ Q @ residual
