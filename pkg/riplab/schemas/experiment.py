from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, model_validator

from riplab.schemas.ensemble import EnsembleKind
from riplab.schemas.recovery import Solver, SolverOptions


class Experiment(str, Enum):
    """Harness subcommands."""

    CONCENTRATION = "concentration"
    MOMENTS = "moments"
    DOMINANCE = "dominance"
    TAILBOUND = "tailbound"
    SWEEP = "sweep"
    SELFTEST = "selftest"


K_EXPERIMENTS = {Experiment.CONCENTRATION, Experiment.TAILBOUND, Experiment.SWEEP}


class ExperimentConfig(BaseModel):
    """Fully resolved harness configuration (defaults < config file < flags)."""

    experiment: Experiment
    M: int = Field(..., ge=1)
    N: int = Field(..., ge=1)
    K: list[int] = Field(default_factory=list)
    r: int = Field(..., ge=1)
    trials: int = Field(..., ge=1)
    samples: int = Field(..., ge=2)
    tmax: int = Field(..., ge=1)
    num_matrices: int = Field(100, ge=1)
    alpha: list[float] = Field(default_factory=lambda: [0.2, 0.5])
    solver: list[Solver] = Field(default_factory=lambda: [Solver.NUCLEAR])
    ensemble: list[EnsembleKind] = Field(default_factory=lambda: [EnsembleKind.UNIT_MODULUS])
    seed: int = Field(..., ge=0)
    out: Path
    workers: int = Field(..., ge=1)
    noise_std: float = Field(0.0, ge=0.0)
    options: SolverOptions = Field(default_factory=SolverOptions)

    @model_validator(mode="after")
    def _check_lists(self) -> "ExperimentConfig":
        if self.experiment in K_EXPERIMENTS and not self.K:
            raise ValueError("K: list must be non-empty for this experiment")
        if any(K < 1 for K in self.K):
            raise ValueError("K: values must be positive")
        if any(not 0.0 < a for a in self.alpha):
            raise ValueError("alpha: values must be positive")
        if self.experiment == Experiment.SWEEP and self.r > min(self.M, self.N):
            raise ValueError("r: rank exceeds min(M, N)")
        return self


class RunManifest(BaseModel):
    """Sidecar describing one harness run."""

    config: dict
    version: str
    wall_clock_seconds: float
    row_counts: dict[str, int]
    master_seed: int
    failures: list[str] = Field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"version: {self.version}",
            f"master_seed: {self.master_seed}",
            f"wall_clock_seconds: {self.wall_clock_seconds:.3f}",
        ]
        lines += [f"config.{key}: {value}" for key, value in sorted(self.config.items())]
        lines += [f"rows.{name}: {count}" for name, count in sorted(self.row_counts.items())]
        lines += [f"failure: {failure}" for failure in self.failures]
        return "\n".join(lines) + "\n"
