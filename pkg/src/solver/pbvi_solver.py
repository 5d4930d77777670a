import math
import time
from functools import partial
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.bounds.lower_bound import backup, best_alpha_index, lower_bound_value, prune_dominated
from src.bounds.upper_bound import (
    SawtoothCounter,
    StageBounds,
    initial_stage_bounds,
    sawtooth_project,
    upper_bound_backup,
)
from src.common.exceptions import DuplicateSupport, FactorizationFailure, GridTooLarge, SolverError
from src.gp.gp_regression import (
    GprState,
    ald_delta,
    auto_signal_variance,
    default_noise_variance,
    expand_support,
    gpr_fit,
    refresh_target,
    ucb,
)
from src.model.pomdp_model import Belief, PomdpModel, log_model_summary
from src.sampling.belief_sampling import SamplingKind, fixed_grid, sample_max_gap, sample_random
from src.solver.run_metrics import IterationRecord, RunMetrics, RunStatus
from src.solver.solver_config import EngineKind, SolverConfig


class SolveResult(NamedTuple):
    lb: float
    ub: float
    gap: float
    metrics: RunMetrics


def target_gap(ub_value: float, rho: int) -> float:
    """Round the upper bound up to a power of ten and divide by 10^rho.

    Non-positive bounds fall back to 10^-rho.
    """
    if ub_value <= 0:
        return 10.0 ** -rho
    return 10.0 ** math.ceil(math.log10(ub_value)) / 10.0 ** rho


def gap_at_b0(bounds: Sequence[StageBounds], b0: Belief) -> Tuple[float, float, float]:
    """(lb, ub, ub − lb) of stage 0 at the initial belief."""
    lb = lower_bound_value(bounds[0].gamma, b0)
    ub = bounds[0].upper.value_at(b0)
    if ub is None:
        raise SolverError("initial belief has no stored upper bound", stage=0)
    return lb, ub, ub - lb


class PointBasedSolver:
    """Point-based value iteration over per-stage belief sets.

    Each iteration expands the belief sets, then sweeps the stages backwards
    updating the α-vector lower bound and the point-set upper bound. Beliefs
    without a stored upper bound are valued by sawtooth projection or, with
    the GP-UCB engine, by the UCB of the next stage's Gaussian process.
    """

    def __init__(self, model: PomdpModel, config: SolverConfig, clock: Callable[[], float] = time.perf_counter):
        self.model = model
        self.config = config
        self.clock = clock
        self.counter = SawtoothCounter()
        self.metrics = RunMetrics()
        self.bounds: List[StageBounds] = []
        self.gps: Dict[int, GprState] = {}
        self.grid: Optional[List[Belief]] = None
        self.grid_used = False
        self.sampling_rng = np.random.default_rng(config.strategy.rng_seed)
        self.refresh_rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self._start = 0.0
        self._full_refresh = True

    @property
    def uses_gp(self) -> bool:
        return self.config.ub_engine == EngineKind.GP_UCB

    def solve(self) -> SolveResult:
        """Run until the gap target, the time limit or a stall."""
        model = self.model
        log_model_summary(model)
        logger.info(
            f"Starting {self.config.ub_engine.value} run on {model.name} with "
            f"{self.config.strategy.kind.value} sampling (seed {self.config.seed})"
        )
        self._start = self.clock()

        try:
            self._stage1_initialize()
        except GridTooLarge as e:
            logger.warning(f"{model.name}: {e}")
            self.metrics.status = RunStatus.GRID_TOO_LARGE
            return SolveResult(math.nan, math.nan, math.nan, self.metrics)

        added = {t: list(stage.beliefs) for t, stage in enumerate(self.bounds)}
        while True:
            self.iteration += 1
            self._stage3_backward_pass(added)
            record = self._stage4_record_iteration()
            status = self._check_stopping(record, sum(len(beliefs) for beliefs in added.values()))
            if status is not None:
                self.metrics.status = status
                break
            added = self._stage2_expand()

        b0 = model.initial_belief
        action = self.bounds[0].gamma[best_alpha_index(self.bounds[0].gamma, b0)].action
        logger.info(
            f"Finished {model.name}: status={self.metrics.status.value}, lb={record.lb:.6g}, "
            f"ub={record.ub:.6g}, gap={record.gap:.3g}, iterations={self.iteration}, "
            f"sawtooth={record.sawtooth_count}, action at b0={model.actions[action]}"
        )
        return SolveResult(record.lb, record.ub, record.gap, self.metrics)

    def _stage1_initialize(self):
        """Stage 1: corner seeds from the MDP bound and B_t = corners ∪ {b0}."""
        model = self.model
        strategy = self.config.strategy
        if strategy.kind == SamplingKind.FIXED_GRID:
            budget = max(1, self.config.grid_cap // (model.num_actions * model.num_observations * model.horizon))
            self.grid = fixed_grid(model.num_states, strategy.grid_resolution, cap=budget)
            logger.info(f"Fixed grid with {len(self.grid)} beliefs per stage")
        self.bounds = initial_stage_bounds(model)

    def _stage2_expand(self) -> Dict[int, List[Belief]]:
        """Stage 2: sample new beliefs and add the ones not yet present."""
        model = self.model
        kind = self.config.strategy.kind
        if kind == SamplingKind.MAX_GAP:
            samples = sample_max_gap(model, self.bounds, model.initial_belief, upper_value=self._upper_value)
        elif kind == SamplingKind.RANDOM:
            samples = sample_random(model, model.horizon, self.sampling_rng)
        elif self.grid_used:
            samples = []
        else:
            samples = [(t, b) for t in range(1, model.horizon) for b in self.grid]
            self.grid_used = True

        added: Dict[int, List[Belief]] = {}
        for t, b in samples:
            if self.bounds[t].add_belief(b):
                added.setdefault(t, []).append(b)
        return added

    def _stage3_backward_pass(self, added: Dict[int, List[Belief]]):
        """Stage 3: update Γ_t and V̄_t from the last stage to the first."""
        model = self.model
        horizon = model.horizon
        self._full_refresh = self._full_refresh_due()

        for t in range(horizon - 1, -1, -1):
            stage = self.bounds[t]
            gamma_next = self.bounds[t + 1].gamma if t + 1 < horizon else []
            fresh = [backup(model, b, t, gamma_next) for b in stage.beliefs]
            stage.gamma = prune_dominated(stage.gamma + fresh)

            projector = partial(self._upper_value, t + 1) if t + 1 < horizon else None
            for b in stage.beliefs:
                stage.upper.update(b, upper_bound_backup(model, b, t, projector))

            if self.uses_gp and t >= 1:
                self._maintain_gp(t, added.get(t, []))

    def _stage4_record_iteration(self) -> IterationRecord:
        """Stage 4: record the bounds at b0."""
        lb, ub, gap = gap_at_b0(self.bounds, self.model.initial_belief)
        record = IterationRecord(
            iteration=self.iteration,
            wall_seconds=self.clock() - self._start,
            lb=lb,
            ub=ub,
            gap=gap,
            sawtooth_count=self.counter.value,
            support_sizes=[self.gps[t].size if t in self.gps else 0 for t in range(self.model.horizon)],
            belief_sizes=[len(stage.beliefs) for stage in self.bounds],
        )
        self.metrics.record(record)
        logger.debug(
            f"Iteration {record.iteration}: lb={lb:.6g} ub={ub:.6g} gap={gap:.3g} "
            f"sawtooth={record.sawtooth_count} t={record.wall_seconds:.2f}s"
        )
        return record

    def _gap_threshold(self, ub: float) -> float:
        return max(self.config.epsilon, target_gap(ub, self.config.rho))

    def _check_stopping(self, record: IterationRecord, num_added: int) -> Optional[RunStatus]:
        config = self.config
        if record.gap <= self._gap_threshold(record.ub):
            return RunStatus.GAP_REACHED
        if self.iteration > 1 and num_added == 0 and self.metrics.gap_change() == 0.0:
            return RunStatus.STALLED
        if config.max_iterations is not None and self.iteration >= config.max_iterations:
            return RunStatus.MAX_ITERATIONS
        if record.wall_seconds >= config.time_limit:
            return RunStatus.TIME_LIMIT
        return None

    def _upper_value(self, t: int, b: Belief) -> float:
        """Upper bound of stage t at b used for successor beliefs."""
        stage = self.bounds[t]
        stored = stage.upper.value_at(b)
        if not self.uses_gp:
            return stored if stored is not None else sawtooth_project(stage.upper, b, self.counter)

        if stored is not None:
            value = stored
        elif t in self.gps:
            value = ucb(self.gps[t], b, self.config.eta)
        else:
            value = sawtooth_project(stage.upper, b, self.counter)
        return max(value, lower_bound_value(stage.gamma, b))

    # GP maintenance

    def _full_refresh_due(self) -> bool:
        config = self.config
        if self.iteration <= config.initial_phase_iters or self.iteration % config.periodic_check_interval == 0:
            return True
        change = self.metrics.gap_change()
        if change is None:
            return True
        return change > 100.0 * self._gap_threshold(self.metrics.final.ub)

    def _sawtooth_target(self, t: int, b: Belief) -> float:
        return sawtooth_project(self.bounds[t].upper, b, self.counter)

    def _fit_stage_gp(self, t: int, supports: np.ndarray) -> GprState:
        config = self.config
        targets = [self._sawtooth_target(t, Belief(row)) for row in supports]
        kernel = config.kernel
        if config.auto_signal_variance:
            kernel = kernel.with_signal_variance(auto_signal_variance(np.asarray(targets)))
        noise = config.noise_variance
        if noise is None:
            noise = default_noise_variance(kernel.signal_variance)
        return gpr_fit(kernel, supports, targets, noise, stage=t)

    def _maintain_gp(self, t: int, added: List[Belief]):
        """Refresh the stage-t GP targets and grow its support set by ALD."""
        try:
            state = self.gps.get(t)
            candidates = added
            if state is None:
                if self.config.random_support_init:
                    supports = self.refresh_rng.dirichlet(np.ones(self.model.num_states), size=self.model.num_states + 1)
                else:
                    supports = np.vstack([b.probs for b in self.bounds[t].beliefs])
                    candidates = []
                state = self._fit_stage_gp(t, supports)
            elif self._full_refresh:
                state = self._fit_stage_gp(t, state.supports)
            else:
                index = int(self.refresh_rng.integers(state.size))
                state = refresh_target(state, index, self._sawtooth_target(t, Belief(state.supports[index])))

            for b in candidates:
                if ald_delta(state, b) > self.config.nu:
                    state = expand_support(state, b, self._sawtooth_target(t, b))
            self.gps[t] = state
        except (FactorizationFailure, DuplicateSupport) as e:
            logger.error(f"GP maintenance failed at stage {t}: {e}")
            raise SolverError(str(e), stage=t) from e
        logger.debug(f"Stage {t}: {state.size} support beliefs")


def solve_pbvi(model: PomdpModel, config: SolverConfig, clock: Callable[[], float] = time.perf_counter) -> SolveResult:
    """PBVI with the sawtooth upper bound."""
    if config.ub_engine != EngineKind.SAWTOOTH:
        raise ValueError("solve_pbvi needs the sawtooth engine; use solve_gpucb for gp-ucb")
    return PointBasedSolver(model, config, clock=clock).solve()


def solve_gpucb(model: PomdpModel, config: SolverConfig, clock: Callable[[], float] = time.perf_counter) -> SolveResult:
    """PBVI with the GP-UCB upper bound."""
    if config.ub_engine != EngineKind.GP_UCB:
        raise ValueError("solve_gpucb needs the gp-ucb engine; use solve_pbvi for sawtooth")
    return PointBasedSolver(model, config, clock=clock).solve()


def solve(model: PomdpModel, config: SolverConfig, clock: Callable[[], float] = time.perf_counter) -> SolveResult:
    """Dispatch on the configured upper-bound engine."""
    if config.ub_engine == EngineKind.GP_UCB:
        return solve_gpucb(model, config, clock=clock)
    return solve_pbvi(model, config, clock=clock)
