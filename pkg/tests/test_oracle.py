import numpy as np
import pytest

from dyngame import oracle
from dyngame.derivatives import differentiate_trajectory
from dyngame.model import rollout, total_cost
from dyngame.problems import build, owner_dog, planar_robots, random_lq_game, random_smooth_game
from dyngame.solver import SolveOptions, backward_pass, solve, take_step
from toys import square_game


class TestDenseJacobian:
    def test_lq_jacobian_is_constant(self):
        p = random_lq_game(seed=2)
        rng = np.random.default_rng(0)
        a = oracle.dense_jacobian(p, rng.normal(size=(10, 2)), np.ones(3)).jacobian
        b = oracle.dense_jacobian(p, rng.normal(size=(10, 2)), np.ones(3)).jacobian
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_single_player_is_symmetric_hessian(self):
        p = square_game(horizon=3)
        u = np.array([[0.1], [-0.2], [0.05]])
        J = oracle.dense_jacobian(p, u, [0.4]).jacobian
        np.testing.assert_allclose(J, J.T, atol=1e-6)
        traj = rollout(p, [0.4], u)
        np.testing.assert_allclose(J, oracle.player_hessian(p, traj, 0), atol=1e-4)

    def test_richardson_ratio_owner_dog(self):
        p, x0, u0 = build("owner-dog")
        u = u0 + 0.3
        J1 = oracle.dense_jacobian(p, u, x0, h=1e-2).jacobian
        J2 = oracle.dense_jacobian(p, u, x0, h=5e-3).jacobian
        J3 = oracle.dense_jacobian(p, u, x0, h=2.5e-3).jacobian
        ratio = np.abs(J1 - J2).max() / np.abs(J2 - J3).max()
        assert ratio == pytest.approx(4.0, rel=0.1)

    def test_rows_match_player_hessians(self):
        p = random_smooth_game(seed=1, horizon=4)
        x0 = np.array([0.1, 0.2, 0.3])
        u = np.random.default_rng(5).normal(size=(4, 2))
        ds = oracle.dense_jacobian(p, u, x0)
        traj = rollout(p, x0, u)
        for n in range(2):
            idx = np.concatenate(ds.index[n])
            np.testing.assert_allclose(ds.jacobian[np.ix_(idx, idx)], oracle.player_hessian(p, traj, n), atol=1e-4)

    def test_size_guard(self):
        p, x0, u0 = build("planar-robots")
        with pytest.raises(oracle.OracleSizeError):
            oracle.dense_jacobian(p, u0, x0)

    def test_flat_round_trip(self):
        p = random_lq_game(seed=0, input_dims=(2, 1), horizon=3)
        ds = oracle.dense_jacobian(p, np.zeros((3, 3)), np.zeros(3))
        u = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(ds.flat_to_controls(ds.controls_to_flat(u)), u)


class TestDenseNewton:
    def test_zero_at_stationary_point(self, owner_dog_star):
        p = owner_dog()
        ds = oracle.dense_jacobian(p, owner_dog_star.controls, owner_dog_star.states[0])
        assert np.abs(oracle.dense_newton_step(ds)).max() < 1e-8

    @pytest.mark.parametrize("seed", range(3))
    def test_lq_matches_stagewise(self, seed):
        p = random_lq_game(seed=seed, num_players=3, state_dim=2, input_dims=(1, 1, 2), horizon=5)
        u = np.random.default_rng(seed).normal(size=(5, 4))
        x0 = np.ones(2)
        dense = oracle.dense_newton_step(oracle.dense_jacobian(p, u, x0))
        fast = take_step(p, rollout(p, x0, u), "newton").controls - u
        np.testing.assert_allclose(fast, dense, rtol=1e-6, atol=1e-6 * np.abs(dense).max())

    def test_singular_jacobian(self):
        ds = oracle.DenseSystem(np.ones(2), np.ones((2, 2)), ((np.arange(1),), (np.arange(1, 2),)), (1, 1), 1)
        with pytest.raises(np.linalg.LinAlgError):
            oracle.dense_newton_step(ds)


class TestBestResponse:
    def test_lq_solution_is_unbeatable(self):
        p, x0, u0 = build("random-lq", seed=1)
        traj = solve(p, x0, u0, SolveOptions()).trajectory
        assert min(oracle.player_hessian_min_eigs(p, traj)) > 0
        for n in range(2):
            assert oracle.best_response_probe(p, traj, n, 200, 1e-2) >= -1e-9

    def test_non_stationary_point_is_beaten(self):
        p, x0, u0 = build("owner-dog")
        traj = rollout(p, x0, u0)
        assert oracle.best_response_probe(p, traj, 0, 50, 1e-2) < 0

    def test_zero_radius(self):
        p, x0, u0 = build("owner-dog")
        assert oracle.best_response_probe(p, rollout(p, x0, u0), 1, 10, 0.0) == 0.0

    def test_seeded(self):
        p, x0, u0 = build("owner-dog")
        traj = rollout(p, x0, u0)
        a = oracle.best_response_probe(p, traj, 0, 20, 1e-2, seed=4)
        assert a == oracle.best_response_probe(p, traj, 0, 20, 1e-2, seed=4)


class TestRestriction:
    def test_reduced_problem_derivatives(self):
        from dyngame.model import validate

        p = random_smooth_game(seed=3, num_players=2, input_dims=(1, 2))
        x0 = np.array([0.2, 0.1, -0.3])
        traj = rollout(p, x0, 0.1 * np.ones((10, 3)))
        policy = backward_pass("newton", *differentiate_trajectory(p, traj), 0.0)[0]
        sub = oracle.restrict_to_player(p, traj, policy, 1)
        rng = np.random.default_rng(0)
        probes = [(k, rng.normal(size=3), rng.normal(size=2)) for k in (0, 5)] + [(10, rng.normal(size=3), None)]
        assert validate(sub, probes) == []

    def test_reduced_rollout_reproduces_closed_loop(self):
        p = owner_dog()
        traj = rollout(p, [-1.0, 2.0], 0.2 * np.ones((10, 2)))
        policy = backward_pass("ddp", *differentiate_trajectory(p, traj), 30.0)[0]
        x0 = np.array([-0.9, 2.1])
        cl = oracle.closed_loop_controls(p, traj, policy, x0)
        sub = oracle.restrict_to_player(p, traj, policy, 0)
        red = rollout(sub, x0, cl.controls[:, :1])
        np.testing.assert_allclose(red.states, cl.states)
        assert total_cost(sub, red).totals[0] == pytest.approx(total_cost(p, cl).totals[0])


def test_feedback_gap_is_second_order():
    """Closed-loop policy at a feedback fixed point is an O(|dx0|^2) feedback equilibrium."""
    p, x0, u0 = build("owner-dog")
    lam = 30.0
    opts = SolveOptions(method="ddp", lam=lam, max_iters=3000, value_update="feedback", step_tol=1e-13)
    rep = solve(p, x0, u0, opts)
    assert rep.reason == "step_tol"
    traj = rep.trajectory
    policy = backward_pass("ddp", *differentiate_trajectory(p, traj), lam, value_update="feedback")[0]
    direction = np.array([1.0, -0.5])
    radii = np.array([1e-1, 3e-2, 1e-2])
    for n in range(2):
        gaps = []
        for r in radii:
            xs = x0 + r * direction
            cl = oracle.closed_loop_controls(p, traj, policy, xs)
            sub = oracle.restrict_to_player(p, traj, policy, n)
            best = solve(sub, xs, cl.controls[:, p.player_slice(n)], SolveOptions(method="ddp", lam=1.0, max_iters=3000))
            assert best.converged
            gaps.append(total_cost(p, cl).totals[n] - total_cost(sub, best.trajectory).totals[0])
        gaps = np.array(gaps)
        assert np.all(gaps > -1e-9)
        assert np.polyfit(np.log(radii), np.log(gaps), 1)[0] >= 1.8
