from dataclasses import dataclass, replace
from typing import Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from src.common.exceptions import DuplicateSupport, FactorizationFailure
from src.gp.kernels import Kernel
from src.model.pomdp_model import BELIEF_EQUALITY_TOLERANCE, Belief

# Jitter is tried at JITTER_START·σ², JITTER_START·σ²·10, ... up to JITTER_MAX·σ².
JITTER_START = 1e-10
JITTER_MAX = 1e-4
NOISE_RATIO = 1e-4

BeliefRows = Union[Sequence[Belief], np.ndarray]


def _as_matrix(beliefs: BeliefRows) -> np.ndarray:
    if isinstance(beliefs, np.ndarray):
        return np.atleast_2d(np.asarray(beliefs, dtype=float))
    return np.vstack([b.probs for b in beliefs])


def auto_signal_variance(targets: np.ndarray) -> float:
    """(max − min)² of the targets, never below 1."""
    targets = np.asarray(targets, dtype=float)
    spread = float(targets.max() - targets.min()) if targets.size else 0.0
    return max(1.0, spread ** 2)


def default_noise_variance(signal_variance: float) -> float:
    return NOISE_RATIO * signal_variance


def jittered_cholesky(matrix: np.ndarray, scale: float) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of matrix + jitter·I with escalating jitter."""
    identity = np.eye(matrix.shape[0])
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9):
        try:
            return cholesky(matrix + jitter * identity, lower=True), jitter
        except LinAlgError:
            logger.warning(f"Cholesky failed with jitter {jitter:.1e}; escalating")
            jitter *= 10.0
    raise FactorizationFailure(
        f"kernel matrix of size {matrix.shape[0]} is not positive definite with jitter up to {JITTER_MAX * scale:.1e}"
    )


@dataclass(frozen=True, eq=False)
class GprState:
    """Fitted GP over the support beliefs of one stage.

    `chol` factors K + (σ_ε² + jitter)I and drives prediction; `ald_chol`
    factors the noise-free K + jitter·I used by the dependence test.
    `weights` are (K + (σ_ε² + jitter)I)⁻¹ v̄. The prior mean is zero.
    """
    kernel: Kernel
    supports: np.ndarray
    targets: np.ndarray
    noise_variance: float
    chol: np.ndarray
    ald_chol: np.ndarray
    jitter: float
    weights: np.ndarray
    stage: int = 0

    @property
    def size(self) -> int:
        return self.supports.shape[0]


def _check_distinct(supports: np.ndarray):
    if supports.shape[0] < 2:
        return
    distances = cdist(supports, supports, "chebyshev")
    i, j = np.triu_indices(supports.shape[0], k=1)
    close = distances[i, j] <= BELIEF_EQUALITY_TOLERANCE
    if np.any(close):
        first = int(np.flatnonzero(close)[0])
        raise DuplicateSupport(f"supports {i[first]} and {j[first]} are the same belief")


def gpr_fit(
    kernel: Kernel,
    supports: BeliefRows,
    targets: Sequence[float],
    noise_variance: float,
    stage: int = 0,
) -> GprState:
    """Factor the support kernel matrix and solve for the prediction weights."""
    supports = _as_matrix(supports)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if supports.shape[0] == 0 or supports.shape[0] != targets.size:
        raise ValueError(f"need matching non-empty supports and targets, got {supports.shape[0]} and {targets.size}")
    if noise_variance < 0:
        raise ValueError("noise variance must be non-negative")
    _check_distinct(supports)

    gram = kernel.gram(supports, supports)
    ald_chol, jitter = jittered_cholesky(gram, kernel.signal_variance)
    chol = cholesky(gram + (noise_variance + jitter) * np.eye(gram.shape[0]), lower=True)
    weights = cho_solve((chol, True), targets)
    return GprState(
        kernel=kernel,
        supports=supports,
        targets=targets,
        noise_variance=float(noise_variance),
        chol=chol,
        ald_chol=ald_chol,
        jitter=jitter,
        weights=weights,
        stage=stage,
    )


def gpr_predict_many(state: GprState, beliefs: BeliefRows) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means and standard deviations at several beliefs."""
    queries = _as_matrix(beliefs)
    cross = state.kernel.gram(state.supports, queries)
    means = cross.T @ state.weights
    projected = solve_triangular(state.chol, cross, lower=True)
    variances = state.kernel.signal_variance - np.sum(projected ** 2, axis=0)
    return means, np.sqrt(np.clip(variances, 0.0, None))


def gpr_predict(state: GprState, b: Belief) -> Tuple[float, float]:
    """Posterior (mean, std) at b."""
    means, stds = gpr_predict_many(state, b.probs[None, :])
    return float(means[0]), float(stds[0])


def ucb(state: GprState, b: Belief, eta: float) -> float:
    """μ(b) + η·σ(b)."""
    mean, std = gpr_predict(state, b)
    return mean + eta * std


def ald_delta(state: GprState, b: Belief) -> float:
    """Residual of projecting φ(b) onto the span of the supports' features."""
    cross = state.kernel.gram(state.supports, b.probs)[:, 0]
    projected = solve_triangular(state.ald_chol, cross, lower=True)
    return max(0.0, state.kernel.signal_variance - float(projected @ projected))


def _extend_factor(factor: np.ndarray, cross: np.ndarray, diagonal: float) -> Tuple[np.ndarray, float]:
    column = solve_triangular(factor, cross, lower=True)
    pivot = diagonal - float(column @ column)
    size = factor.shape[0]
    extended = np.zeros((size + 1, size + 1))
    extended[:size, :size] = factor
    extended[size, :size] = column
    extended[size, size] = np.sqrt(max(pivot, 0.0))
    return extended, pivot


def expand_support(state: GprState, b: Belief, target: float) -> GprState:
    """Add one support with a rank-1 extension of both factors.

    Falls back to a full refit when the new point is numerically dependent on
    the current supports.
    """
    distances = np.max(np.abs(state.supports - b.probs[None, :]), axis=1)
    if np.any(distances <= BELIEF_EQUALITY_TOLERANCE):
        raise DuplicateSupport(f"{b} is already a support of stage {state.stage}")

    supports = np.vstack([state.supports, b.probs])
    targets = np.append(state.targets, float(target))
    cross = state.kernel.gram(state.supports, b.probs)[:, 0]
    prior = state.kernel.signal_variance

    ald_chol, ald_pivot = _extend_factor(state.ald_chol, cross, prior + state.jitter)
    if ald_pivot <= state.jitter:
        logger.debug(f"Stage {state.stage}: support nearly dependent, refitting {supports.shape[0]} points")
        return gpr_fit(state.kernel, supports, targets, state.noise_variance, stage=state.stage)
    chol, _ = _extend_factor(state.chol, cross, prior + state.noise_variance + state.jitter)
    weights = cho_solve((chol, True), targets)
    return replace(state, supports=supports, targets=targets, chol=chol, ald_chol=ald_chol, weights=weights)


def refresh_target(state: GprState, index: int, new_target: float) -> GprState:
    """Replace one target; the factorization is reused."""
    if not 0 <= index < state.size:
        raise IndexError(f"support index {index} out of range for {state.size} supports")
    targets = state.targets.copy()
    targets[index] = float(new_target)
    return replace(state, targets=targets, weights=cho_solve((state.chol, True), targets))


def refresh_all_targets(state: GprState, targets: Sequence[float]) -> GprState:
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if targets.size != state.size:
        raise ValueError(f"expected {state.size} targets, got {targets.size}")
    return replace(state, targets=targets, weights=cho_solve((state.chol, True), targets))
