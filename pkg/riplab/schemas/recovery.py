from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from riplab.config import settings
from riplab.schemas.ensemble import EnsembleKind


class Solver(str, Enum):
    """Recovery solvers (also the CSV spelling)."""

    NUCLEAR = "nuclear"
    ALTMIN = "altmin"
    GD = "gd"


class FactorPair(BaseModel):
    """Factored candidate X = L R^H."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    L: np.ndarray = Field(..., description="M x r left factor")
    R: np.ndarray = Field(..., description="N x r right factor")

    @model_validator(mode="after")
    def _check_rank(self) -> "FactorPair":
        if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[1]:
            raise ValueError(f"factor column counts differ: {self.L.shape} vs {self.R.shape}")
        return self

    def matrix(self) -> np.ndarray:
        return self.L @ self.R.conj().T


class SolverOptions(BaseModel):
    """Iteration controls shared by the three solvers.

    `max_iters=None` selects the per-solver default from settings.
    """

    max_iters: int | None = Field(None, ge=1)
    tol: float = Field(settings.tol, gt=0.0, description="Relative residual tolerance")
    step_size: float = Field(settings.step_size, gt=0.0, description="Gradient solver step scale")
    rho: float = Field(settings.rho, gt=0.0, description="Splitting penalty")
    ridge: float = Field(settings.ridge, ge=0.0)
    inner_cg_tol: float = Field(settings.inner_cg_tol, gt=0.0)
    inner_cg_iters: int = Field(settings.inner_cg_iters, ge=1)
    seed: int = Field(settings.default_seed, ge=0)

    def iterations_for(self, solver: Solver) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return {
            Solver.NUCLEAR: settings.nuclear_max_iters,
            Solver.ALTMIN: settings.altmin_max_iters,
            Solver.GD: settings.gd_max_iters,
        }[solver]


class RecoveryResult(BaseModel):
    """Outcome of one solver run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    solver: Solver
    X_hat: np.ndarray
    rel_error: float | None = Field(None, ge=0.0)
    residual: float = Field(..., ge=0.0, description="||A(X_hat) - y||_2")
    iterations: int = Field(..., ge=0)
    converged: bool
    residual_trace: list[float] = Field(default_factory=list)
    error_trace: list[float] | None = None

    @model_validator(mode="after")
    def _check_trace(self) -> "RecoveryResult":
        if len(self.residual_trace) != self.iterations:
            raise ValueError("residual trace length must equal the iteration count")
        return self


class SweepConfig(BaseModel):
    """Grid of (K, solver, ensemble, trial) cells for a phase-transition sweep."""

    M: int = Field(..., ge=1)
    N: int = Field(..., ge=1)
    r: int = Field(..., ge=1)
    K_values: list[int] = Field(..., min_length=1)
    solvers: list[Solver] = Field(..., min_length=1)
    ensembles: list[EnsembleKind] = Field(..., min_length=1)
    trials: int = Field(..., ge=1)
    master_seed: int = Field(..., ge=0)
    noise_std: float = Field(0.0, ge=0.0)
    options: SolverOptions = Field(default_factory=SolverOptions)

    @model_validator(mode="after")
    def _check_rank(self) -> "SweepConfig":
        if self.r > min(self.M, self.N):
            raise ValueError(f"rank {self.r} exceeds min(M, N) = {min(self.M, self.N)}")
        if any(K < 1 for K in self.K_values):
            raise ValueError("K values must be positive")
        return self


class SweepRow(BaseModel):
    """One sweep cell; failed cells keep NaN errors and the failure text."""

    K: int
    solver: Solver
    ensemble: EnsembleKind
    trial: int
    rel_error: float
    residual: float
    iterations: int
    converged: bool
    error: str | None = None
