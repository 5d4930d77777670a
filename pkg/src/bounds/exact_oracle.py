import itertools
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from src.bounds.lower_bound import AlphaVector, gamma_matrix, prune_dominated
from src.common.exceptions import BlowupExceeded
from src.model.pomdp_model import Belief, PomdpModel

DEFAULT_EXACT_CAP = 1_000_000


def exact_value(model: PomdpModel, horizon: Optional[int] = None, cap: float = DEFAULT_EXACT_CAP) -> List[List[AlphaVector]]:
    """Exact value function by enumerating every cross-sum of the backup.

    Returns the pruned vector sets for stages 0..horizon-1. Before each stage
    the size of the full enumeration |A|·|Γ_{t+1}|^|O| is checked against
    `cap`.
    """
    horizon = model.horizon if horizon is None else horizon
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")

    gamma = prune_dominated([AlphaVector(model.reward[:, a], a) for a in range(model.num_actions)])
    stages: List[List[AlphaVector]] = [gamma]

    for t in range(horizon - 2, -1, -1):
        size = len(gamma)
        enumeration = model.num_actions * float(size) ** model.num_observations
        if enumeration > cap:
            raise BlowupExceeded(
                f"stage {t} needs {enumeration:.3g} vectors, above the cap of {cap:.3g}"
            )
        # projected[a, o, k, s] = Σ_{s'} Θ(s,a,s') Ω(a,s',o) α_k(s')
        projected = np.einsum("asy,ayo,ky->aoks", model.transition, model.observation_fn, gamma_matrix(gamma))

        candidates = []
        for a in range(model.num_actions):
            partial = [model.reward[:, a]]
            for o in range(model.num_observations):
                sums = [AlphaVector(p + projected[a, o, k], a) for p in partial for k in range(size)]
                partial = [alpha.values for alpha in prune_dominated(sums)]
            candidates.extend(AlphaVector(values, a) for values in partial)
        gamma = prune_dominated(candidates)
        stages.insert(0, gamma)
        logger.debug(f"Exact stage {t}: {len(gamma)} vectors after pruning")

    return stages


def convex_hull_value(beliefs: np.ndarray, values: np.ndarray, query: Belief) -> float:
    """Tightest convex interpolation of (belief, value) pairs at query.

    Minimizes Σ c_i v_i over c >= 0 with Σ c_i b_i = query by enumerating
    every basis of |S| points. The point set must span the simplex (for
    example by containing every corner).
    """
    beliefs = np.asarray(beliefs, dtype=float)
    values = np.asarray(values, dtype=float)
    num_states = beliefs.shape[1]
    best = np.inf
    for subset in itertools.combinations(range(len(beliefs)), num_states):
        basis = beliefs[list(subset)].T
        if abs(np.linalg.det(basis)) < 1e-12:
            continue
        weights = np.linalg.solve(basis, query.probs)
        if weights.min() < -1e-10:
            continue
        best = min(best, float(weights @ values[list(subset)]))
    if not np.isfinite(best):
        raise ValueError("query is outside the convex hull of the point set")
    return best


def exact_values_at(stages: Sequence[Sequence[AlphaVector]], b: Belief) -> List[float]:
    """V_t(b) for every stage of an exact solution."""
    return [float(np.max(gamma_matrix(gamma) @ b.probs)) for gamma in stages]
