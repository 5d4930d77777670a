import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.model.pomdp_model import Belief, PomdpModel
from src.model.pomdp_parser import parse_pomdp

PROBLEMS_DIR = Path(__file__).parent / "data" / "problems"


def make_random_model(
    seed: int,
    num_states: int = 3,
    num_actions: int = 2,
    num_observations: int = 2,
    horizon: int = 2,
) -> PomdpModel:
    """Dense random model with Dirichlet rows and rewards in [-10, 10]."""
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(num_states), size=(num_actions, num_states))
    observation_fn = rng.dirichlet(np.ones(num_observations), size=(num_actions, num_states))
    reward = rng.uniform(-10.0, 10.0, size=(num_states, num_actions))
    return PomdpModel(
        states=[f"s{i}" for i in range(num_states)],
        actions=[f"a{i}" for i in range(num_actions)],
        observations=[f"o{i}" for i in range(num_observations)],
        transition=transition,
        observation_fn=observation_fn,
        reward=reward,
        initial_belief=Belief(np.full(num_states, 1.0 / num_states)),
        horizon=horizon,
        name=f"random{seed}",
    )


@pytest.fixture
def tiger_text() -> str:
    return (PROBLEMS_DIR / "tiger.pomdp").read_text(encoding="utf-8")


@pytest.fixture
def tiger_model(tiger_text) -> PomdpModel:
    return parse_pomdp(tiger_text, horizon=1, name="tiger")


@pytest.fixture(scope="session")
def random_model_factory():
    return make_random_model


@pytest.fixture
def problems_dir() -> Path:
    return PROBLEMS_DIR
