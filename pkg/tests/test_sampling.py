import numpy as np
import pytest
from pydantic import ValidationError

from src.bounds.lower_bound import backup
from src.bounds.upper_bound import initial_stage_bounds
from src.common.exceptions import GridTooLarge
from src.model.pomdp_model import belief_update, obs_prob
from src.sampling.belief_sampling import (
    SamplingKind,
    SamplingStrategy,
    fixed_grid,
    grid_size,
    sample_max_gap,
    sample_random,
)


def _bounds_after_terminal_backups(model):
    """Initial stage bounds with every stage's Γ filled by terminal backups."""
    bounds = initial_stage_bounds(model)
    for stage in bounds:
        stage.gamma = [backup(model, b, model.horizon - 1, []) for b in stage.beliefs]
    return bounds


class TestFixedGrid:
    """Test cases for the regular simplex grid."""

    def test_two_states_resolution_two(self):
        """Test the three points of the coarsest interior grid."""
        grid = fixed_grid(2, 2)
        assert sorted(tuple(b.probs) for b in grid) == [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]

    def test_size_matches_combinatorics(self):
        """Test C(r + |S| - 1, |S| - 1) points on the simplex."""
        grid = fixed_grid(3, 3)
        assert len(grid) == grid_size(3, 3) == 10
        for b in grid:
            np.testing.assert_allclose(b.probs * 3, np.round(b.probs * 3), atol=1e-12)
        assert len({b.key() for b in grid}) == 10

    def test_cap(self):
        """Test GridTooLarge above the cap."""
        with pytest.raises(GridTooLarge, match="cap is 9"):
            fixed_grid(3, 3, cap=9)

    def test_resolution_one_is_corners(self):
        """Test that the coarsest grid is exactly the corners."""
        grid = fixed_grid(3, 1)
        assert sorted(tuple(b.probs) for b in grid) == [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0)]

    @pytest.mark.parametrize("num_states", [2, 3, 4])
    @pytest.mark.parametrize("resolution", [1, 2, 3, 4])
    def test_contains_every_corner(self, num_states, resolution):
        """Test duplicate-free grids that include each w_s."""
        grid = fixed_grid(num_states, resolution)
        assert len({b.key() for b in grid}) == len(grid) == grid_size(num_states, resolution)
        corners = {b.corner_index() for b in grid} - {None}
        assert corners == set(range(num_states))

    def test_three_states_resolution_four(self):
        """Test the 15 points of C(6, 2)."""
        assert len(fixed_grid(3, 4)) == 15

    def test_bad_resolution(self):
        """Test resolution validation."""
        with pytest.raises(ValueError):
            fixed_grid(3, 0)
        with pytest.raises(ValidationError):
            SamplingStrategy(kind=SamplingKind.FIXED_GRID, grid_resolution=0)


class TestRandomSampling:
    """Test cases for uniform simplex sampling."""

    def test_one_belief_per_later_stage(self, random_model_factory):
        """Test stages 1..T-1 each get a belief."""
        model = random_model_factory(0, num_states=4, horizon=4)
        samples = sample_random(model, model.horizon, np.random.default_rng(0))
        assert [t for t, _ in samples] == [1, 2, 3]
        assert all(len(b) == 4 for _, b in samples)

    def test_same_seed_same_beliefs(self, random_model_factory):
        """Test reproducibility."""
        model = random_model_factory(0, horizon=3)
        first = sample_random(model, 3, np.random.default_rng(42))
        second = sample_random(model, 3, np.random.default_rng(42))
        for (_, a), (_, b) in zip(first, second):
            np.testing.assert_array_equal(a.probs, b.probs)

    def test_uniform_on_simplex(self, random_model_factory):
        """Test that the Dirichlet(1) draws average to the simplex center."""
        model = random_model_factory(0, num_states=3)
        samples = sample_random(model, 100_001, np.random.default_rng(123))
        mean = np.mean([b.probs for _, b in samples], axis=0)
        np.testing.assert_allclose(mean, np.full(3, 1.0 / 3.0), atol=0.01)

    def test_single_stage_has_nothing_to_sample(self, tiger_model):
        """Test horizon 1."""
        assert sample_random(tiger_model, 1, np.random.default_rng(0)) == []


class TestMaxGapSampling:
    """Test cases for the greedy gap-following trajectory."""

    def test_tiger_first_sample(self, tiger_model):
        """Test that listening and the first growl lead to (0.85, 0.15)."""
        model = tiger_model.with_horizon(2)
        samples = sample_max_gap(model, _bounds_after_terminal_backups(model), model.initial_belief)
        assert len(samples) == 1
        stage, b = samples[0]
        assert stage == 1
        np.testing.assert_allclose(b.probs, [0.85, 0.15])

    def test_trajectory_length(self, tiger_model):
        """Test one belief per stage after the first."""
        model = tiger_model.with_horizon(4)
        samples = sample_max_gap(model, _bounds_after_terminal_backups(model), model.initial_belief)
        assert [t for t, _ in samples] == [1, 2, 3]

    @pytest.mark.parametrize("seed", range(5))
    def test_samples_are_reachable(self, random_model_factory, seed):
        """Test that each sample is a Bayes update of the previous one for some feasible (a, o)."""
        model = random_model_factory(seed, num_states=3, num_actions=3, num_observations=2, horizon=5)
        samples = sample_max_gap(model, _bounds_after_terminal_backups(model), model.initial_belief)
        previous = model.initial_belief
        for _, b in samples:
            replayed = [
                belief_update(model, previous, a, o)
                for a in range(model.num_actions)
                for o in range(model.num_observations)
                if obs_prob(model, previous, a, o) > 0.0
            ]
            assert any(candidate.distance(b) <= 1e-10 for candidate in replayed)
            previous = b

    def test_custom_upper_value(self, tiger_model):
        """Test that the supplied upper-value callback is used for successors."""
        model = tiger_model.with_horizon(2)
        calls = []

        def upper_value(t, b):
            calls.append(t)
            return 10.0

        sample_max_gap(model, _bounds_after_terminal_backups(model), model.initial_belief, upper_value=upper_value)
        assert calls and set(calls) == {1}
