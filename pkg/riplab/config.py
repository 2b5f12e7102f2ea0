import os
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix RIPLAB_)."""

    model_config = SettingsConfigDict(
        env_prefix="RIPLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # App
    app_name: str = "riplab"
    app_env: str = "development"
    log_level: str = "WARNING"

    # Logfire (Observability)
    logfire_token: str = ""
    service_name: str = "riplab"

    # Experiment defaults: 40x80 target, rank 5
    default_M: int = 40
    default_N: int = 80
    default_r: int = 5
    default_seed: int = 20240101
    default_trials: int = 5000
    default_samples: int = 200_000
    default_t_max: int = 8
    workers: int = os.cpu_count() or 1

    # Solver defaults
    rho: float = 1.0
    ridge: float = 1e-10
    tol: float = 1e-6
    step_size: float = 0.25
    inner_cg_tol: float = 1e-10
    inner_cg_iters: int = 200
    nuclear_max_iters: int = 500
    altmin_max_iters: int = 100
    gd_max_iters: int = 2000

    # Serialization
    scalar_width: int = 8


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
