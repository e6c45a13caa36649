import numpy as np
import pytest

from dyngame.model import (
    DimensionError,
    GameProblem,
    NonFiniteStateError,
    cost_to_go,
    rollout,
    total_cost,
    validate,
)
from dyngame.problems import owner_dog, planar_robots, random_lq_game, sigmoid
from toys import scalar_game, with_broken_derivative


class TestRollout:
    def test_additive(self):
        traj = rollout(scalar_game(horizon=2), [0.0], [1.0, 1.0])
        np.testing.assert_array_equal(traj.states[:, 0], [0, 1, 2])

    def test_doubling(self):
        traj = rollout(scalar_game(horizon=2, a=2.0), [1.0], [0.0, 0.0])
        np.testing.assert_array_equal(traj.states[:, 0], [1, 2, 4])

    def test_owner_dog_zero_input_stays_put(self):
        p = owner_dog()
        traj = rollout(p, [-1.0, 2.0], np.zeros((10, 2)))
        np.testing.assert_array_equal(traj.states, np.tile([-1.0, 2.0], (11, 1)))

    def test_wrong_control_length(self):
        with pytest.raises(DimensionError):
            rollout(scalar_game(horizon=3), [0.0], [1.0, 1.0])

    def test_wrong_state_dim(self):
        with pytest.raises(DimensionError, match="dimension"):
            rollout(owner_dog(), [0.0], np.zeros((10, 2)))

    def test_nonfinite_names_stage(self):
        p = scalar_game(horizon=4, a=1e200)
        with pytest.raises(NonFiniteStateError) as info, np.errstate(over="ignore"):
            rollout(p, [1e200], np.zeros(4))
        assert info.value.stage == 1


class TestCosts:
    def test_quadratic_at_zero(self):
        g = scalar_game(horizon=3)
        assert total_cost(g, rollout(g, [0.0], np.zeros(3))).totals == pytest.approx([0.0])

    def test_owner_dog_nominal(self):
        p = owner_dog()
        costs = total_cost(p, rollout(p, [-1.0, 2.0], np.zeros((10, 2))))
        assert costs[0] == pytest.approx(110 * sigmoid(4.0), rel=1e-12)
        assert costs[0] == pytest.approx(108.0215, abs=1e-4)
        assert costs[1] == pytest.approx(11 * np.tanh(3.0) ** 2, rel=1e-12)
        assert costs[1] == pytest.approx(10.8915, abs=1e-4)

    def test_stage_breakdown_sums(self):
        p = owner_dog()
        traj = rollout(p, [-1.0, 2.0], 0.3 * np.ones((10, 2)))
        c = total_cost(p, traj)
        np.testing.assert_allclose(c.stages.sum(axis=0), c.totals)
        np.testing.assert_allclose(cost_to_go(p, traj, 0), c.totals)
        np.testing.assert_allclose(cost_to_go(p, traj, 10), c.stages[-1])

    def test_dimension_mismatch(self):
        p = owner_dog()
        traj = rollout(scalar_game(horizon=10), [0.0], np.zeros(10))
        with pytest.raises(DimensionError):
            total_cost(p, traj)


class TestProblemDefinition:
    def test_rejects_inconsistent_inputs(self):
        base = scalar_game()
        with pytest.raises(DimensionError):
            GameProblem(**{**base.__dict__, "input_dims": (1, 1)})

    def test_player_slices(self):
        p = random_lq_game(seed=0, num_players=3, input_dims=(1, 2, 3))
        assert p.input_offsets == (0, 1, 3)
        assert p.player_slice(2) == slice(3, 6)
        assert p.num_decision_variables == 60


class TestValidate:
    @pytest.mark.parametrize("factory", [owner_dog, planar_robots, lambda: random_lq_game(seed=3)])
    def test_catalog_is_clean(self, factory):
        assert validate(factory()) == []

    def test_dimension_error_names_block(self):
        p = scalar_game(horizon=2)

        def bad(k, x, u):
            A, B, G = p.dynamics_derivs(k, x, u)
            return A, np.zeros((2, 1)), G

        import dataclasses

        diags = validate(dataclasses.replace(p, dynamics_derivs=bad))
        assert diags and diags[0].where == "B_0"

    def test_factor_two_error_in_b(self):
        p = with_broken_derivative(owner_dog(), "B", 2.0)
        diags = validate(p, probes=[(0, [0.1, 0.2], [0.3, -0.4])])
        hit = [d for d in diags if d.where == "B_0"]
        assert len(hit) == 1
        assert hit[0].value == pytest.approx(1.0, rel=1e-3)

    def test_probes_pass_on_correct_problem(self):
        p = owner_dog()
        rng = np.random.default_rng(0)
        probes = [(k, rng.normal(size=2), rng.normal(size=2)) for k in range(3)] + [(10, rng.normal(size=2), None)]
        assert validate(p, probes=probes) == []
