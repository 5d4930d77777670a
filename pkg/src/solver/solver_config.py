from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, Field

from src.config.settings import settings
from src.gp.kernels import Kernel, KernelFamily
from src.sampling.belief_sampling import SamplingKind, SamplingStrategy


class EngineKind(str, Enum):
    SAWTOOTH = "sawtooth"
    GP_UCB = "gp-ucb"


class SolverConfig(BaseModel):
    """Parameters of one solver run.

    `seed` drives the random support refresh of the GP engine; sampling draws
    from `strategy.rng_seed`. `noise_variance=None` selects 1e-4 times the
    signal variance, and `auto_signal_variance` re-estimates the signal
    variance from the targets on every full refit.
    """
    strategy: SamplingStrategy = Field(default_factory=SamplingStrategy)
    ub_engine: EngineKind = EngineKind.SAWTOOTH
    rho: int = Field(default=5, ge=1)
    eta: float = Field(default=1.0, ge=0)
    nu: float = Field(default=1e-5, gt=0)
    epsilon: float = Field(default=1e-6, ge=0)
    time_limit: float = Field(default=3000.0, gt=0)
    initial_phase_iters: int = Field(default=5, ge=0)
    periodic_check_interval: int = Field(default=5, ge=1)
    seed: int = 0
    kernel: Kernel = Field(default_factory=Kernel)
    noise_variance: Optional[float] = Field(default=None, ge=0)
    auto_signal_variance: bool = True
    random_support_init: bool = False
    grid_cap: int = Field(default=200_000, ge=1)
    max_iterations: Optional[int] = Field(default=None, ge=1)

    @classmethod
    def from_settings(cls, **overrides: Any) -> "SolverConfig":
        """Build a config from the environment settings, then apply overrides."""
        seed = overrides.pop("seed", settings.seed)
        strategy = overrides.pop("strategy", None)
        if strategy is None or isinstance(strategy, (str, SamplingKind)):
            strategy = SamplingStrategy(
                kind=strategy or SamplingKind.MAX_GAP,
                grid_resolution=settings.grid_resolution,
                rng_seed=seed,
            )
        values = {
            "strategy": strategy,
            "rho": settings.rho,
            "eta": settings.eta,
            "nu": settings.nu,
            "epsilon": settings.epsilon,
            "time_limit": settings.time_limit,
            "initial_phase_iters": settings.initial_phase_iters,
            "periodic_check_interval": settings.periodic_check_interval,
            "seed": seed,
            "kernel": Kernel(family=KernelFamily(settings.kernel_family), length_scale=settings.length_scale),
            "random_support_init": settings.random_support_init,
            "grid_cap": settings.grid_cap,
        }
        values.update(overrides)
        return cls(**values)
