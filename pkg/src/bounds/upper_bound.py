import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.bounds.lower_bound import AlphaVector
from src.model.pomdp_model import BELIEF_EQUALITY_TOLERANCE, Belief, PomdpModel, corner_beliefs, successor_table


class SawtoothCounter:
    """Monotone count of sawtooth projections for one solver run."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def increment(self, amount: int = 1):
        with self._lock:
            self._count += amount

    @property
    def value(self) -> int:
        return self._count


class UpperBoundSet:
    """Belief/bound pairs for one stage: every corner plus interior points.

    Values only ever decrease: `update` keeps the minimum of the stored and the
    offered value. Beliefs that coincide with a corner are folded into the
    corner entry.
    """

    def __init__(self, corner_values: np.ndarray, stage: int = 0):
        corner_values = np.array(corner_values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(corner_values)):
            raise ValueError("corner values must be finite")
        self.stage = stage
        self.corner_values = corner_values
        self._beliefs: List[Belief] = []
        self._values: List[float] = []
        self._index: Dict[bytes, int] = {}
        self._cache: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def num_states(self) -> int:
        return self.corner_values.size

    def __len__(self) -> int:
        return self.num_states + len(self._beliefs)

    @property
    def points(self) -> List[Tuple[Belief, float]]:
        corners = [(Belief(row), float(v)) for row, v in zip(np.eye(self.num_states), self.corner_values)]
        return corners + list(zip(self._beliefs, self._values))

    def value_at(self, b: Belief) -> Optional[float]:
        """Stored bound at b, or None if b is not in the set."""
        corner = b.corner_index()
        if corner is not None:
            return float(self.corner_values[corner])
        index = self._find(b)
        return None if index is None else self._values[index]

    def _find(self, b: Belief) -> Optional[int]:
        """Index of the stored interior point equal to b.

        The rounded key is only a fast path; two equal beliefs can round to
        different keys, so a miss falls back to a tolerance scan.
        """
        index = self._index.get(b.key())
        if index is not None or not self._beliefs:
            return index
        matrix, _ = self.interior_arrays()
        distances = np.max(np.abs(matrix - b.probs[None, :]), axis=1)
        nearest = int(np.argmin(distances))
        return nearest if distances[nearest] <= BELIEF_EQUALITY_TOLERANCE else None

    def update(self, b: Belief, value: float) -> float:
        """Store min(previous, value) at b and return the stored bound."""
        if not np.isfinite(value):
            raise ValueError(f"upper bound at {b} is not finite: {value}")
        corner = b.corner_index()
        if corner is not None:
            self.corner_values[corner] = min(self.corner_values[corner], value)
            return float(self.corner_values[corner])
        index = self._find(b)
        if index is None:
            self._index[b.key()] = len(self._beliefs)
            self._beliefs.append(b)
            self._values.append(float(value))
        else:
            self._values[index] = min(self._values[index], float(value))
            value = self._values[index]
        self._cache = None
        return float(value)

    def interior_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Interior beliefs as an (n, |S|) matrix and their bounds."""
        if self._cache is None:
            if self._beliefs:
                matrix = np.vstack([b.probs for b in self._beliefs])
            else:
                matrix = np.empty((0, self.num_states))
            self._cache = (matrix, np.array(self._values, dtype=float))
        return self._cache


@dataclass
class StageBounds:
    """Lower and upper bound state of one stage plus its belief set."""
    stage: int
    upper: UpperBoundSet
    gamma: List[AlphaVector] = field(default_factory=list)
    beliefs: List[Belief] = field(default_factory=list)
    _keys: set = field(default_factory=set, init=False, repr=False)

    def __post_init__(self):
        existing, self.beliefs = self.beliefs, []
        for b in existing:
            self.add_belief(b)

    def add_belief(self, b: Belief) -> bool:
        """Append b unless an equal belief is present; True when added."""
        key = b.key()
        if key in self._keys or any(b.same_as(other) for other in self.beliefs):
            return False
        self._keys.add(key)
        self.beliefs.append(b)
        return True


def sawtooth_project(ubs: UpperBoundSet, b_query: Belief, counter: Optional[SawtoothCounter] = None) -> float:
    """Sawtooth interpolation of the point set at b_query.

    Each interior point b contributes λ(b)·f(b), with f the gap between its
    bound and the corner interpolation and λ = min over b(s) > 0 of
    b_query(s)/b(s). The result never exceeds the corner interpolation.
    """
    if counter is not None:
        counter.increment()
    corner_value = float(b_query.probs @ ubs.corner_values)
    matrix, values = ubs.interior_arrays()
    if values.size == 0:
        return corner_value

    offsets = values - matrix @ ubs.corner_values
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(matrix > 0.0, b_query.probs[None, :] / matrix, np.inf)
    lambdas = ratios.min(axis=1)
    return corner_value + min(0.0, float(np.min(lambdas * offsets)))


def upper_bound_q_values(
    model: PomdpModel, b: Belief, t: int, projector: Callable[[Belief], float]
) -> np.ndarray:
    """One-step upper-bound value of every action at b."""
    immediate = b.probs @ model.reward
    if t >= model.horizon - 1:
        return immediate
    probs, successors = successor_table(model, b)
    q_values = immediate.copy()
    for a in range(model.num_actions):
        for o in np.flatnonzero(probs[a] > 0.0):
            q_values[a] += probs[a, o] * projector(Belief(successors[a, o]))
    return q_values


def upper_bound_backup(model: PomdpModel, b: Belief, t: int, projector: Callable[[Belief], float]) -> float:
    """max_a [b·R(·,a) + Σ_o P(o|b,a) projector(b'_{a,o})], skipping impossible o."""
    return float(np.max(upper_bound_q_values(model, b, t, projector)))


def mdp_corner_bounds(model: PomdpModel) -> np.ndarray:
    """Fully-observable values per stage, shape (horizon, |S|)."""
    values = np.empty((model.horizon, model.num_states))
    values[-1] = model.reward.max(axis=1)
    for t in range(model.horizon - 2, -1, -1):
        expected_next = np.einsum("asy,y->sa", model.transition, values[t + 1])
        values[t] = (model.reward + expected_next).max(axis=1)
    return values


def initial_stage_bounds(model: PomdpModel) -> List[StageBounds]:
    """Per-stage bounds seeded with MDP corner values and beliefs {w_s} ∪ {b0}."""
    corner_values = mdp_corner_bounds(model)
    stages = []
    for t in range(model.horizon):
        beliefs = corner_beliefs(model) + [model.initial_belief]
        stages.append(StageBounds(stage=t, upper=UpperBoundSet(corner_values[t], stage=t), beliefs=beliefs))
    return stages
