import itertools
import math
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.bounds.lower_bound import lower_bound_value
from src.bounds.upper_bound import SawtoothCounter, StageBounds, sawtooth_project
from src.common.exceptions import GridTooLarge
from src.model.pomdp_model import Belief, PomdpModel, successor_table

DEFAULT_GRID_CAP = 200_000

StagedBelief = Tuple[int, Belief]
UpperValue = Callable[[int, Belief], float]


class SamplingKind(str, Enum):
    MAX_GAP = "max-gap"
    RANDOM = "random"
    FIXED_GRID = "fixed-grid"


class SamplingStrategy(BaseModel):
    """Belief expansion method used between backward passes."""
    kind: SamplingKind = SamplingKind.MAX_GAP
    grid_resolution: int = Field(default=3, ge=1)
    rng_seed: int = 0


def stored_or_sawtooth(bounds: Sequence[StageBounds], counter: Optional[SawtoothCounter] = None) -> UpperValue:
    """Upper value lookup: the stored bound when present, else sawtooth."""
    def upper_value(t: int, b: Belief) -> float:
        stored = bounds[t].upper.value_at(b)
        if stored is not None:
            return stored
        return sawtooth_project(bounds[t].upper, b, counter)
    return upper_value


def sample_max_gap(
    model: PomdpModel,
    bounds: Sequence[StageBounds],
    b0: Belief,
    upper_value: Optional[UpperValue] = None,
) -> List[StagedBelief]:
    """Follow the greedy upper-bound action and the widest-gap observation from b0.

    Returns one belief for each stage 1..horizon-1. The action maximizes
    b·R(·,a) + Σ_o P(o|b,a)·V̄_{t+1}(b'_{a,o}); the observation maximizes
    V̄_{t+1} − V̲_{t+1} at the successor. Ties go to the lowest index.
    """
    upper_value = upper_value or stored_or_sawtooth(bounds)
    samples = []
    b = b0
    for t in range(model.horizon - 1):
        probs, successors = successor_table(model, b)
        immediate = b.probs @ model.reward

        upper = np.full(probs.shape, np.nan)
        for a, o in zip(*np.nonzero(probs > 0.0)):
            upper[a, o] = upper_value(t + 1, Belief(successors[a, o]))
        q_values = immediate + np.nansum(probs * upper, axis=1)
        action = int(np.argmax(q_values))

        feasible = np.flatnonzero(probs[action] > 0.0)
        gaps = [
            upper[action, o] - lower_bound_value(bounds[t + 1].gamma, Belief(successors[action, o]))
            for o in feasible
        ]
        observation = int(feasible[int(np.argmax(gaps))])

        b = Belief(successors[action, observation])
        samples.append((t + 1, b))
    return samples


def sample_random(model: PomdpModel, stages: int, rng: np.random.Generator) -> List[StagedBelief]:
    """One uniform draw from the simplex for each stage 1..stages-1."""
    alpha = np.ones(model.num_states)
    return [(t, Belief(rng.dirichlet(alpha))) for t in range(1, stages)]


def grid_size(num_states: int, resolution: int) -> int:
    return math.comb(resolution + num_states - 1, num_states - 1)


def fixed_grid(num_states: int, resolution: int, cap: int = DEFAULT_GRID_CAP) -> List[Belief]:
    """Every belief whose entries are multiples of 1/resolution."""
    if resolution < 1:
        raise ValueError(f"grid resolution must be at least 1, got {resolution}")
    count = grid_size(num_states, resolution)
    if count > cap:
        raise GridTooLarge(
            f"grid with |S|={num_states} and resolution {resolution} has {count} points, cap is {cap}"
        )

    grid = []
    slots = resolution + num_states - 1
    for bars in itertools.combinations(range(slots), num_states - 1):
        edges = (-1,) + bars + (slots,)
        counts = np.diff(edges) - 1
        grid.append(Belief(counts / resolution))
    return grid
