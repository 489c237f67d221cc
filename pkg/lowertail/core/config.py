from typing import Optional
from pydantic_settings import BaseSettings
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings."""

    # Application settings
    ENVIRONMENT: str = "development"
    LOG_LEVEL: Optional[str] = None  # Overrides the environment-derived level
    LOG_FILE: Optional[str] = None  # Rotating file sink, e.g. "logs/lowertail.log"

    # Variational solver
    FEASIBILITY_RTOL: float = 1e-8
    FIXED_POINT_TOL: float = 1e-12  # Sup-norm step size that ends the inner iteration
    DAMPING: float = 0.5
    MIN_DAMPING: float = 1.0 / 64
    MAX_INNER_ITERATIONS: int = 20_000
    MAX_DUAL_ITERATIONS: int = 200  # Bisection steps on theta
    MAX_DUAL_GROWTH: int = 200  # Doublings of theta_max
    PIN_THRESHOLD: float = 1e-14
    MULTISTART_RANDOM: int = 8
    MULTISTART_SEED: int = 0
    BOUNDARY_STARTS: int = 8  # Starts grown from maximal independent sets
    POLISH_FTOL: float = 1e-14  # SLSQP stopping tolerance on the objective
    POLISH_MAX_ITERATIONS: int = 500
    PRIMAL_IMPROVEMENT_RTOL: float = 1e-9  # Margin a polished point needs to replace a KKT point

    # Enumeration budgets
    EDGE_BUDGET: int = 10_000_000
    EXACT_VERTEX_BUDGET: int = 28
    CONDITIONAL_VERTEX_BUDGET: int = 20
    INDEPENDENCE_VERTEX_BUDGET: int = 40
    INDEPENDENT_SET_RESTARTS: int = 16  # Greedy seeds for the local search past that budget
    GRID_VERTEX_BUDGET: int = 4
    GRID_POINT_BUDGET: int = 100_000_000
    ENUMERATION_BLOCK_BITS: int = 16
    TRIANGLES_MAX_N: int = 7

    # Sampling
    MC_BLOCK_SIZE: int = 4096

    # Harness work pool
    WORKERS: int = 1

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"  # Ignore unrelated env vars


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
