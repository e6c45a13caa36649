import numpy as np
import pytest

from dyngame.derivatives import (
    SupplierError,
    differentiate_stage,
    differentiate_terminal,
    differentiate_trajectory,
    eval_quadratic_dynamics,
    fd_stage_oracle,
    fd_terminal_oracle,
    pack_cost,
)
from dyngame.model import DimensionError, rollout
from dyngame.problems import owner_dog, planar_robots, random_lq_game, random_smooth_game, sigmoid
from toys import scalar_game, square_game


def assert_bundle_close(sd, od, rtol=1e-3, atol=1e-5):
    for name in ("A", "B"):
        np.testing.assert_allclose(getattr(sd, name), getattr(od, name), rtol=rtol, atol=atol, err_msg=name)
    for exact, approx in zip(sd.G, od.G):
        np.testing.assert_allclose(exact, approx, atol=max(atol, rtol * np.abs(approx).max()))
    for exact, approx in zip(sd.M[:, 1:, :], od.M[:, 1:, :]):
        np.testing.assert_allclose(exact, approx, atol=max(atol, rtol * np.abs(approx).max()))


class TestPacking:
    def test_scalar_terminal(self):
        td = differentiate_terminal(scalar_game(), np.array([1.0]))
        np.testing.assert_allclose(td.V[0], [[2, 2], [2, 2]])

    def test_zero_terminal(self):
        M = pack_cost(np.zeros(1), np.zeros((1, 2)), np.zeros((1, 2, 2)))
        np.testing.assert_array_equal(M, 0)

    def test_owner_terminal_gradient(self):
        td = differentiate_terminal(owner_dog(), np.array([-1.0, 2.0]))
        s = sigmoid(4.0)
        expected = -400 * s * (1 - s)
        assert td.V[0, 0, 1] == pytest.approx(expected, rel=1e-12)
        assert td.V[0, 0, 1] == pytest.approx(-7.065, abs=1e-3)

    def test_owner_dog_identity_jacobians(self):
        sd = differentiate_stage(owner_dog(), 0, np.array([-1.0, 2.0]), np.zeros(2))
        np.testing.assert_array_equal(sd.A, np.eye(2))
        np.testing.assert_array_equal(sd.B, np.eye(2))


class TestAgainstFiniteDifferences:
    @pytest.mark.parametrize(
        "factory",
        [owner_dog, planar_robots, lambda: random_smooth_game(seed=2), lambda: random_lq_game(seed=2)],
    )
    def test_stage_and_terminal(self, factory):
        p = factory()
        rng = np.random.default_rng(7)
        for _ in range(5):
            k = int(rng.integers(p.horizon))
            x = rng.normal(size=p.state_dim)
            u = rng.normal(size=p.input_dim)
            assert_bundle_close(differentiate_stage(p, k, x, u), fd_stage_oracle(p, k, x, u))
            td, fd = differentiate_terminal(p, x), fd_terminal_oracle(p, x)
            np.testing.assert_allclose(td.V[:, 1:, :], fd.V[:, 1:, :], rtol=1e-3, atol=1e-5)

    def test_linear_dynamics_have_flat_curvature(self):
        p = random_lq_game(seed=5)
        od = fd_stage_oracle(p, 0, np.zeros(3), np.zeros(2), h=1e-4)
        assert np.abs(od.G).max() < 1e-8

    def test_richardson_order(self):
        p = random_smooth_game(seed=4, nonlinearity=1.0)
        x, u = np.array([0.3, -0.2, 0.5]), np.array([0.1, 0.4])
        exact = differentiate_stage(p, 0, x, u)
        e1 = np.abs(fd_stage_oracle(p, 0, x, u, h=1e-2).B - exact.B).max()
        e2 = np.abs(fd_stage_oracle(p, 0, x, u, h=5e-3).B - exact.B).max()
        assert e1 / e2 == pytest.approx(4.0, rel=0.1)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            fd_stage_oracle(owner_dog(), 0, np.zeros(2), np.zeros(2), h=0.0)


class TestQuadraticDynamics:
    def test_zero_delta(self):
        p = owner_dog()
        x, u = np.array([0.2, 0.1]), np.array([0.5, -0.5])
        sd = differentiate_stage(p, 0, x, u)
        np.testing.assert_array_equal(eval_quadratic_dynamics(sd, p.dynamics(0, x, u), np.zeros(2), np.zeros(2)), p.dynamics(0, x, u))

    def test_linear_exact(self):
        p = random_lq_game(seed=0)
        sd = differentiate_stage(p, 0, np.zeros(3), np.zeros(2))
        dx, du = np.array([1.0, -2.0, 0.5]), np.array([3.0, 1.0])
        np.testing.assert_allclose(eval_quadratic_dynamics(sd, np.zeros(3), dx, du), p.dynamics(0, dx, du))

    def test_quadratic_map_is_reproduced(self):
        p = square_game()
        sd = differentiate_stage(p, 0, np.array([1.0]), np.array([0.0]))
        pred = eval_quadratic_dynamics(sd, np.array([1.0]), np.array([0.1]), np.array([0.0]))
        assert pred[0] == pytest.approx(1.21, abs=1e-14)

    def test_taylor_remainder_is_cubic(self):
        p = random_smooth_game(seed=1, nonlinearity=1.0)
        x, u = np.array([0.2, -0.1, 0.4]), np.array([0.3, -0.2])
        sd = differentiate_stage(p, 0, x, u)
        f0 = p.dynamics(0, x, u)
        d = np.random.default_rng(0).normal(size=5)
        scales = np.array([1e-1, 3e-2, 1e-2])
        errs = [
            np.abs(p.dynamics(0, x + t * d[:3], u + t * d[3:]) - eval_quadratic_dynamics(sd, f0, t * d[:3], t * d[3:])).max()
            for t in scales
        ]
        slope = np.polyfit(np.log(scales), np.log(errs), 1)[0]
        assert slope >= 2.7

    def test_dimension_mismatch(self):
        sd = differentiate_stage(owner_dog(), 0, np.zeros(2), np.zeros(2))
        with pytest.raises(DimensionError):
            eval_quadratic_dynamics(sd, np.zeros(2), np.zeros(3), np.zeros(2))


class TestTrajectory:
    def test_bundle_count_and_threads(self, monkeypatch):
        p = owner_dog()
        traj = rollout(p, [-1.0, 2.0], 0.1 * np.ones((10, 2)))
        serial, term = differentiate_trajectory(p, traj)
        monkeypatch.setenv("DYNGAME_THREADS", "3")
        threaded, term2 = differentiate_trajectory(p, traj)
        assert len(serial) == 10
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.M, b.M)
        np.testing.assert_array_equal(term.V, term2.V)

    def test_supplier_failure_is_wrapped(self):
        import dataclasses

        def boom(k, x, u):
            raise RuntimeError("nope")

        p = dataclasses.replace(owner_dog(), dynamics_derivs=boom)
        with pytest.raises(SupplierError) as info:
            differentiate_stage(p, 3, np.zeros(2), np.zeros(2))
        assert info.value.stage == 3

    def test_out_of_range_stage(self):
        with pytest.raises(IndexError):
            differentiate_stage(owner_dog(), 10, np.zeros(2), np.zeros(2))
