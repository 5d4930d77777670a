import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.common.exceptions import InvalidBelief, ModelValidationError, PomdpParseError, ZeroProbabilityObservation
from src.model.pomdp_model import (
    Belief,
    PomdpModel,
    belief_update,
    corner_beliefs,
    obs_prob,
    successor_table,
    uniform_belief,
)
from src.model.pomdp_parser import load_pomdp, parse_pomdp, serialize_pomdp

TWO_STATE_HEADER = """
states: s0 s1
actions: a
observations: o0 o1
"""

BENCHMARK_SIZES = {
    "cheng.D5.1.pomdp": (5, 3, 3),
    "network.pomdp": (7, 4, 2),
    "query.s3.pomdp": (27, 3, 3),
    "hallway.pomdp": (60, 5, 21),
    "aloha.30.pomdp": (90, 29, 3),
}


class TestParsePomdp:
    """Test cases for the Cassandra format reader."""

    def test_tiger_sizes_and_rewards(self, tiger_model):
        """Test tiger problem dimensions and reward table."""
        assert (tiger_model.num_states, tiger_model.num_actions, tiger_model.num_observations) == (2, 3, 2)
        assert tiger_model.states == ["tiger-left", "tiger-right"]
        listen, open_left, open_right = range(3)
        assert tiger_model.reward[0, listen] == -1.0
        assert tiger_model.reward[1, listen] == -1.0
        assert tiger_model.reward[0, open_left] == -100.0
        assert tiger_model.reward[1, open_left] == 10.0
        assert tiger_model.reward[0, open_right] == 10.0
        assert tiger_model.reward[1, open_right] == -100.0

    def test_tiger_tensors(self, tiger_model):
        """Test identity, uniform and matrix blocks."""
        np.testing.assert_array_equal(tiger_model.transition[0], np.eye(2))
        np.testing.assert_array_equal(tiger_model.transition[1], np.full((2, 2), 0.5))
        np.testing.assert_array_equal(tiger_model.observation_fn[0], [[0.85, 0.15], [0.15, 0.85]])

    def test_discount_is_recorded_but_not_used(self, tiger_model):
        """Test that the file discount is kept for reporting only."""
        assert tiger_model.file_discount == 0.95
        assert tiger_model.discount == 1.0

    def test_uniform_start(self, tiger_model):
        """Test the start: uniform entry."""
        np.testing.assert_array_equal(tiger_model.initial_belief.probs, [0.5, 0.5])

    def test_missing_start_defaults_to_uniform(self):
        """Test that a file without start: gets the uniform belief."""
        text = "states: 4\nactions: a\nobservations: o\nT: a uniform\nO: a uniform\n"
        model = parse_pomdp(text)
        np.testing.assert_allclose(model.initial_belief.probs, np.full(4, 0.25))
        assert model.states == ["0", "1", "2", "3"]

    def test_uniform_row_keyword(self):
        """Test T: a : s : uniform."""
        text = "states: 3\nactions: a\nobservations: o\nT: a identity\nT: a : 1\nuniform\nO: a : * : o 1.0\n"
        model = parse_pomdp(text)
        np.testing.assert_allclose(model.transition[0, 1], np.full(3, 1.0 / 3.0))
        np.testing.assert_array_equal(model.transition[0, 0], [1.0, 0.0, 0.0])

    def test_single_entries_and_wildcards(self):
        """Test T: a : s : s' value entries with * expansion."""
        text = TWO_STATE_HEADER + (
            "T: * : * : s0 0.25\n"
            "T: * : * : s1 0.75\n"
            "O: a : s0 : o0 1.0\n"
            "O: a : s1 : o1 1.0\n"
        )
        model = parse_pomdp(text)
        np.testing.assert_array_equal(model.transition[0], [[0.25, 0.75], [0.25, 0.75]])
        np.testing.assert_array_equal(model.observation_fn[0], [[1.0, 0.0], [0.0, 1.0]])

    def test_general_reward_is_marginalized(self):
        """Test that R(a,s,s',o) is reduced to its expectation under T and O."""
        text = TWO_STATE_HEADER + (
            "T: a uniform\n"
            "O: a uniform\n"
            "R: a : s0 : s0 : * 4\n"
            "R: a : s0 : s1 : * 8\n"
            "R: a : s1 : * : o0 2\n"
        )
        model = parse_pomdp(text)
        assert model.reward[0, 0] == pytest.approx(6.0)
        assert model.reward[1, 0] == pytest.approx(1.0)

    def test_cost_values_are_negated(self):
        """Test values: cost."""
        text = "values: cost\n" + TWO_STATE_HEADER + "T: a identity\nO: a uniform\nR: a : s1 : * : * 3\n"
        model = parse_pomdp(text)
        np.testing.assert_array_equal(model.reward[:, 0], [0.0, -3.0])

    def test_start_include_and_exclude(self):
        """Test start include: and start exclude: lists."""
        base = "states: a b c d\nactions: x\nobservations: o\nT: x identity\nO: x uniform\n"
        included = parse_pomdp(base + "start include: a c\n")
        excluded = parse_pomdp(base + "start exclude: a\n")
        np.testing.assert_allclose(included.initial_belief.probs, [0.5, 0.0, 0.5, 0.0])
        np.testing.assert_allclose(excluded.initial_belief.probs, [0.0, 1 / 3, 1 / 3, 1 / 3])

    def test_start_single_state(self):
        """Test start: <state name>."""
        text = TWO_STATE_HEADER + "start: s1\nT: a identity\nO: a uniform\n"
        np.testing.assert_array_equal(parse_pomdp(text).initial_belief.probs, [0.0, 1.0])

    def test_small_drift_is_renormalized(self):
        """Test that rows within 1e-6 of one are rescaled."""
        text = TWO_STATE_HEADER + "T: a\n0.5 0.5000001\n0.5 0.5\nO: a uniform\n"
        model = parse_pomdp(text)
        assert model.transition[0, 0].sum() == pytest.approx(1.0, abs=1e-12)

    def test_bad_row_sum_reports_row(self):
        """Test that a row far from one is rejected with its identity."""
        text = TWO_STATE_HEADER + "T: a\n0.5 0.4\n0.5 0.5\nO: a uniform\n"
        with pytest.raises(PomdpParseError, match=r"transition row \(a, s0\)"):
            parse_pomdp(text)

    def test_syntax_error_has_line_number(self):
        """Test that syntax errors carry the offending line."""
        text = "states: s0 s1\nactions: a\nobservations: o\nT: a identity\nO: a : s0 : o oops\n"
        with pytest.raises(PomdpParseError) as excinfo:
            parse_pomdp(text)
        assert excinfo.value.line == 5
        assert "line 5" in str(excinfo.value)

    def test_unknown_identifier(self):
        """Test unknown state names."""
        text = TWO_STATE_HEADER + "T: a : s7 : s0 1.0\n"
        with pytest.raises(PomdpParseError, match="unknown state identifier 's7'"):
            parse_pomdp(text)

    def test_entries_before_declarations(self):
        """Test T: before states/actions/observations."""
        with pytest.raises(PomdpParseError, match="appears before"):
            parse_pomdp("T: a identity\nstates: 2\n")

    def test_comments_are_ignored(self, tiger_text):
        """Test comment handling."""
        commented = "# leading comment\n" + tiger_text.replace("T: listen", "T: listen # keep")
        model = parse_pomdp(commented)
        np.testing.assert_array_equal(model.transition[0], np.eye(2))

    def test_round_trip_is_bit_exact(self, tiger_model):
        """Test parse -> serialize -> parse on the tiger problem."""
        reparsed = parse_pomdp(serialize_pomdp(tiger_model))
        np.testing.assert_array_equal(reparsed.transition, tiger_model.transition)
        np.testing.assert_array_equal(reparsed.observation_fn, tiger_model.observation_fn)
        np.testing.assert_array_equal(reparsed.reward, tiger_model.reward)
        np.testing.assert_allclose(reparsed.initial_belief.probs, tiger_model.initial_belief.probs)
        assert reparsed.states == tiger_model.states
        assert reparsed.actions == tiger_model.actions

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_round_trip_random_models(self, random_model_factory, seed):
        """Test that canonical text reproduces random tensors after one normalization pass."""
        canonical = parse_pomdp(serialize_pomdp(random_model_factory(seed, num_states=4, num_actions=3)))
        reparsed = parse_pomdp(serialize_pomdp(canonical))
        np.testing.assert_array_equal(reparsed.transition, canonical.transition)
        np.testing.assert_array_equal(reparsed.observation_fn, canonical.observation_fn)
        np.testing.assert_array_equal(reparsed.reward, canonical.reward)

    def test_load_pomdp_names_model_after_file(self, problems_dir):
        """Test load_pomdp with a horizon."""
        model = load_pomdp(problems_dir / "tiger.pomdp", horizon=3)
        assert model.name == "tiger"
        assert model.horizon == 3

    @pytest.mark.slow
    @pytest.mark.parametrize("filename,sizes", sorted(BENCHMARK_SIZES.items()))
    def test_benchmark_file_sizes(self, problems_dir, filename, sizes):
        """Test published benchmark files load with their documented sizes."""
        path = problems_dir / filename
        if not path.is_file():
            pytest.skip(f"{filename} is not available")
        model = load_pomdp(path)
        assert (model.num_states, model.num_actions, model.num_observations) == sizes


class TestPomdpModel:
    """Test cases for model validation."""

    def test_rejects_bad_row(self, tiger_model):
        """Test that an unnormalized transition row is rejected."""
        transition = np.array(tiger_model.transition)
        transition[0, 0] = [0.7, 0.7]
        with pytest.raises(ModelValidationError, match="transition"):
            PomdpModel(
                states=tiger_model.states,
                actions=tiger_model.actions,
                observations=tiger_model.observations,
                transition=transition,
                observation_fn=np.array(tiger_model.observation_fn),
                reward=np.array(tiger_model.reward),
                initial_belief=tiger_model.initial_belief,
            )

    def test_rejects_non_positive_horizon(self, tiger_model):
        """Test horizon validation."""
        with pytest.raises(ModelValidationError):
            tiger_model.with_horizon(0)

    def test_tensors_are_read_only(self, tiger_model):
        """Test immutability after construction."""
        with pytest.raises(ValueError):
            tiger_model.reward[0, 0] = 5.0


class TestBelief:
    """Test cases for belief construction."""

    def test_renormalizes_small_drift(self):
        """Test renormalization within tolerance."""
        b = Belief([0.5, 0.5 + 1e-9])
        assert b.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_large_drift(self):
        """Test rejection beyond 1e-6."""
        with pytest.raises(InvalidBelief):
            Belief([0.5, 0.6])

    def test_rejects_negative_entries(self):
        """Test rejection of negative probabilities."""
        with pytest.raises(InvalidBelief):
            Belief([1.2, -0.2])

    def test_corner_index(self):
        """Test corner detection."""
        assert Belief([0.0, 1.0]).corner_index() == 1
        assert Belief([0.5, 0.5]).corner_index() is None

    def test_corner_beliefs(self, tiger_model, random_model_factory):
        """Test the unit vectors in state order."""
        corners = corner_beliefs(tiger_model)
        np.testing.assert_array_equal([c.probs for c in corners], [[1.0, 0.0], [0.0, 1.0]])
        five = corner_beliefs(random_model_factory(0, num_states=5))
        assert len(five) == 5
        assert all(c.probs.sum() == 1.0 for c in five)


class TestBeliefArithmetic:
    """Test cases for observation probabilities and the Bayes update."""

    def test_obs_prob_symmetric(self, tiger_model):
        """Test P(growl-left | b0, listen)."""
        assert obs_prob(tiger_model, uniform_belief(2), 0, 0) == pytest.approx(0.5)

    def test_obs_prob_skewed(self, tiger_model):
        """Test P(growl-left | (0.85, 0.15), listen)."""
        assert obs_prob(tiger_model, Belief([0.85, 0.15]), 0, 0) == pytest.approx(0.745)

    def test_belief_update_from_uniform(self, tiger_model):
        """Test the first reachable beliefs."""
        b = belief_update(tiger_model, uniform_belief(2), 0, 0)
        np.testing.assert_allclose(b.probs, [0.85, 0.15])
        b = belief_update(tiger_model, uniform_belief(2), 0, 1)
        np.testing.assert_allclose(b.probs, [0.15, 0.85])

    def test_belief_update_twice(self, tiger_model):
        """Test two consistent growls."""
        b = belief_update(tiger_model, Belief([0.85, 0.15]), 0, 0)
        expected = 0.85 ** 2 / (0.85 ** 2 + 0.15 ** 2)
        np.testing.assert_allclose(b.probs, [expected, 1.0 - expected])

    def test_deterministic_model_fixed_point(self):
        """Test identity dynamics with a perfectly informative sensor."""
        text = TWO_STATE_HEADER + "T: a identity\nO: a\n1 0\n0 1\n"
        model = parse_pomdp(text)
        corner = Belief([1.0, 0.0])
        assert obs_prob(model, corner, 0, 0) == 1.0
        np.testing.assert_array_equal(belief_update(model, corner, 0, 0).probs, [1.0, 0.0])
        with pytest.raises(ZeroProbabilityObservation):
            belief_update(model, corner, 0, 1)

    def test_successor_table_matches_update(self, random_model_factory):
        """Test the vectorized successor table against belief_update."""
        model = random_model_factory(5, num_states=3, num_actions=2, num_observations=3)
        b = Belief([0.2, 0.3, 0.5])
        probs, successors = successor_table(model, b)
        for a in range(model.num_actions):
            for o in range(model.num_observations):
                assert probs[a, o] == pytest.approx(obs_prob(model, b, a, o))
                np.testing.assert_allclose(successors[a, o], belief_update(model, b, a, o).probs)

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
        weights=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=3, max_size=3).filter(lambda w: sum(w) > 1e-3),
    )
    def test_observation_probabilities_sum_to_one(self, random_model_factory, seed, weights):
        """Test that P(o|b,a) sums to one and every update is a belief."""
        model = random_model_factory(seed, num_states=3, num_actions=2, num_observations=3)
        b = Belief(np.array(weights) / sum(weights))
        for a in range(model.num_actions):
            total = sum(obs_prob(model, b, a, o) for o in range(model.num_observations))
            assert total == pytest.approx(1.0, abs=1e-9)
            for o in range(model.num_observations):
                if obs_prob(model, b, a, o) > 0.0:
                    updated = belief_update(model, b, a, o)
                    assert updated.probs.min() >= 0.0
                    assert updated.probs.sum() == pytest.approx(1.0, abs=1e-9)
