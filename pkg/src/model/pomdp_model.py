from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from src.common.exceptions import InvalidBelief, ModelValidationError, ZeroProbabilityObservation

# Sums within this distance of 1 are renormalized, anything further is rejected.
NORMALIZATION_TOLERANCE = 1e-6
# Two beliefs closer than this (L-infinity) are the same point.
BELIEF_EQUALITY_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Belief:
    """A point on the |S|-simplex."""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.size == 0 or not np.all(np.isfinite(probs)):
            raise InvalidBelief(f"belief must be a finite non-empty vector, got {probs}")
        if probs.min() < -BELIEF_EQUALITY_TOLERANCE:
            raise InvalidBelief(f"belief has negative entries: {probs}")
        probs = np.clip(probs, 0.0, None)
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise InvalidBelief(f"belief sums to {total}, expected 1")
        if total != 1.0:
            probs = probs / total
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.size

    def key(self) -> bytes:
        """Hashable identity used for stored-belief lookups."""
        return np.round(self.probs, 12).tobytes()

    def distance(self, other: "Belief") -> float:
        return float(np.max(np.abs(self.probs - other.probs)))

    def same_as(self, other: "Belief") -> bool:
        return self.distance(other) <= BELIEF_EQUALITY_TOLERANCE

    def corner_index(self) -> Optional[int]:
        """State index if this belief is a corner w_s, else None."""
        s = int(np.argmax(self.probs))
        if abs(self.probs[s] - 1.0) <= BELIEF_EQUALITY_TOLERANCE:
            return s
        return None

    def __repr__(self) -> str:
        return f"Belief({np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """The finite-horizon POMDP tuple.

    Tensors are dense numpy arrays laid out as
    ``transition[a, s, s'] = P(s'|s,a)``, ``observation_fn[a, s', o] = P(o|a,s')``
    and ``reward[s, a]``. The discount is fixed to 1; the value read from a file
    is kept in ``file_discount`` for reporting only.
    """
    states: List[str]
    actions: List[str]
    observations: List[str]
    transition: np.ndarray
    observation_fn: np.ndarray
    reward: np.ndarray
    initial_belief: Belief
    horizon: int = 1
    name: str = "pomdp"
    file_discount: Optional[float] = None
    discount: float = field(default=1.0, init=False)

    def __post_init__(self):
        self.validate()
        for array in (self.transition, self.observation_fn, self.reward):
            array.setflags(write=False)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return len(self.observations)

    def with_horizon(self, horizon: int) -> "PomdpModel":
        return replace(self, horizon=horizon)

    def validate(self):
        """Check shapes and probability invariants."""
        n_s, n_a, n_o = self.num_states, self.num_actions, self.num_observations
        if min(n_s, n_a, n_o) < 1:
            raise ModelValidationError("model needs at least one state, action and observation")
        if self.horizon < 1:
            raise ModelValidationError(f"horizon must be a positive integer, got {self.horizon}")
        expected = {
            "transition": (self.transition, (n_a, n_s, n_s)),
            "observation_fn": (self.observation_fn, (n_a, n_s, n_o)),
            "reward": (self.reward, (n_s, n_a)),
        }
        for label, (array, shape) in expected.items():
            if array.shape != shape:
                raise ModelValidationError(f"{label} has shape {array.shape}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise ModelValidationError(f"{label} contains non-finite entries")
        for label, tensor in (("transition", self.transition), ("observation_fn", self.observation_fn)):
            if tensor.min() < 0.0 or tensor.max() > 1.0:
                raise ModelValidationError(f"{label} has entries outside [0, 1]")
            deviation = np.abs(tensor.sum(axis=2) - 1.0)
            if deviation.max() > 1e-9:
                a, row = np.unravel_index(int(np.argmax(deviation)), deviation.shape)
                raise ModelValidationError(
                    f"{label} row (action={self.actions[a]}, state={self.states[row]}) "
                    f"sums to {tensor[a, row].sum()}"
                )
        if len(self.initial_belief) != n_s:
            raise ModelValidationError("initial belief length does not match the state count")


def uniform_belief(num_states: int) -> Belief:
    return Belief(np.full(num_states, 1.0 / num_states))


def corner_beliefs(model: PomdpModel) -> List[Belief]:
    """Unit vectors w_s in state order."""
    return [Belief(row) for row in np.eye(model.num_states)]


def _predicted_states(model: PomdpModel, b: Belief, a: int) -> np.ndarray:
    return b.probs @ model.transition[a]


def obs_prob(model: PomdpModel, b: Belief, a: int, o: int) -> float:
    """P(o|b,a)."""
    predicted = _predicted_states(model, b, a)
    return float(predicted @ model.observation_fn[a, :, o])


def belief_update(model: PomdpModel, b: Belief, a: int, o: int) -> Belief:
    """Bayes update of b after action a and observation o."""
    unnormalized = model.observation_fn[a, :, o] * _predicted_states(model, b, a)
    probability = unnormalized.sum()
    if probability <= 0.0:
        raise ZeroProbabilityObservation(
            f"observation {model.observations[o]} has zero probability after "
            f"action {model.actions[a]} from {b}"
        )
    return Belief(unnormalized / probability)


def successor_table(model: PomdpModel, b: Belief) -> Tuple[np.ndarray, np.ndarray]:
    """Observation probabilities and successor beliefs for every (a, o).

    Returns ``probs`` with shape (|A|, |O|) and ``successors`` with shape
    (|A|, |O|, |S|); rows whose probability is zero are left as zeros.
    """
    predicted = np.einsum("s,asy->ay", b.probs, model.transition)
    joint = predicted[:, :, None] * model.observation_fn
    probs = joint.sum(axis=1)
    successors = np.zeros((model.num_actions, model.num_observations, model.num_states))
    feasible = probs > 0.0
    successors[feasible] = np.transpose(joint, (0, 2, 1))[feasible] / probs[feasible][:, None]
    return probs, successors


def log_model_summary(model: PomdpModel):
    logger.info(
        f"Model {model.name}: |S|={model.num_states}, |A|={model.num_actions}, "
        f"|O|={model.num_observations}, T={model.horizon}"
    )
