from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from src.model.pomdp_model import Belief, PomdpModel


@dataclass(frozen=True, eq=False)
class AlphaVector:
    """Linear piece of the lower bound, tagged with the action that generated it."""
    values: np.ndarray
    action: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"alpha-vector has non-finite entries: {values}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value(self, b: Belief) -> float:
        return float(self.values @ b.probs)


def gamma_matrix(gamma: Sequence[AlphaVector]) -> np.ndarray:
    """Stack a vector set into a (|Γ|, |S|) matrix."""
    return np.vstack([alpha.values for alpha in gamma])


def best_alpha_index(gamma: Sequence[AlphaVector], b: Belief) -> int:
    """Index of the maximizing vector at b; ties go to the lowest index."""
    if not gamma:
        raise ValueError("gamma is empty")
    return int(np.argmax(gamma_matrix(gamma) @ b.probs))


def lower_bound_value(gamma: Sequence[AlphaVector], b: Belief) -> float:
    """max over α in Γ of b·α."""
    if not gamma:
        raise ValueError("gamma is empty")
    return float(np.max(gamma_matrix(gamma) @ b.probs))


def backup(model: PomdpModel, b: Belief, t: int, gamma_next: Sequence[AlphaVector]) -> AlphaVector:
    """Point-based Bellman backup at b for stage t.

    At the terminal stage (t = horizon - 1) the candidates are the reward
    columns. Otherwise, for every (a, o) the vector of Γ_{t+1} that is best at
    the successor belief is projected back through Θ and Ω. Observations that
    cannot occur after a at b keep the first vector of Γ_{t+1}; their term is
    zero at b either way.
    """
    reward = model.reward.T
    if t >= model.horizon - 1:
        candidates = reward
    else:
        if not gamma_next:
            raise ValueError(f"stage {t + 1} has no alpha-vectors to back up from")
        next_matrix = gamma_matrix(gamma_next)
        predicted = np.einsum("s,asy->ay", b.probs, model.transition)
        # scores[a, o, k] = P(o|b,a) * (b'_{a,o} · α_k), unnormalized
        scores = np.einsum("ay,ayo,ky->aok", predicted, model.observation_fn, next_matrix)
        chosen = np.argmax(scores, axis=2)
        feasible = np.einsum("ay,ayo->ao", predicted, model.observation_fn) > 0.0
        chosen = np.where(feasible, chosen, 0)
        selected = next_matrix[chosen]
        candidates = reward + np.einsum("asy,ayo,aoy->as", model.transition, model.observation_fn, selected)

    action = int(np.argmax(candidates @ b.probs))
    return AlphaVector(candidates[action], action)


def prune_dominated(gamma: Sequence[AlphaVector]) -> List[AlphaVector]:
    """Drop exact duplicates and pointwise-dominated vectors.

    The first occurrence of a duplicated vector is kept, so the result is
    stable under the input order.
    """
    if len(gamma) <= 1:
        return list(gamma)
    matrix = gamma_matrix(gamma)
    kept = []
    for i, alpha in enumerate(gamma):
        v = matrix[i]
        at_least = np.all(matrix >= v, axis=1)
        strictly = np.any(matrix > v, axis=1)
        if np.any(at_least & strictly):
            continue
        equal = at_least & ~strictly
        if np.any(equal[:i]):
            continue
        kept.append(alpha)
    return kept
