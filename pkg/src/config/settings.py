from pydantic_settings import BaseSettings
from pydantic import Field


class Settings(BaseSettings):
    """Application settings configuration."""
    
    # Logging Configuration
    log_level: str = Field(default="INFO")
    log_file: str = Field(default="logs/solver.log")
    
    # Output Configuration
    results_dir: str = Field(default="results")
    problems_dir: str = Field(default="data/problems")
    
    # Stopping Criteria
    rho: int = Field(default=5)
    epsilon: float = Field(default=1e-6)
    time_limit: float = Field(default=3000.0)
    
    # GP-UCB Configuration
    eta: float = Field(default=1.0)
    nu: float = Field(default=1e-5)
    initial_phase_iters: int = Field(default=5)
    periodic_check_interval: int = Field(default=5)
    kernel_family: str = Field(default="exponential")
    length_scale: float = Field(default=1.0)
    random_support_init: bool = Field(default=False)
    
    # Sampling Configuration
    grid_resolution: int = Field(default=3)
    grid_cap: int = Field(default=200_000)
    
    # Exact Oracle Configuration
    exact_cap: int = Field(default=1_000_000)
    
    # Run Configuration
    seed: int = Field(default=0)
    jobs: int = Field(default=1)
    
    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "POMDP_"
        case_sensitive = False


# Global settings instance
settings = Settings()
