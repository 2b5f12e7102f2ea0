from enum import Enum

from pydantic import BaseModel, Field, model_validator

from riplab.schemas.ensemble import EnsembleKind


class TailSide(str, Enum):
    """Which tail of ||A(X)||^2 - 1 a bound or estimate concerns."""

    UPPER = "upper"
    LOWER = "lower"


class TailBoundReport(BaseModel):
    """Chernoff bound with the optimized parameter and its exponent."""

    side: TailSide
    alpha: float = Field(..., gt=0.0)
    K: int = Field(..., ge=1)
    M: int = Field(..., ge=1)
    N: int = Field(..., ge=1)
    h_star: float = Field(..., gt=0.0)
    per_measurement_log: float = Field(..., description="ln of the per-measurement factor")
    log_bound: float = Field(..., description="K * per_measurement_log, before clamping")
    total_bound: float = Field(..., ge=0.0, le=1.0)
    degenerate: bool = False


class TailEstimate(BaseModel):
    """Empirical tail frequency with its normal-approximation standard error."""

    side: TailSide
    alpha: float
    K: int
    trials: int
    estimate: float = Field(..., ge=0.0, le=1.0)
    stderr: float = Field(..., ge=0.0)

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        """Normal-approximation confidence interval clipped to [0, 1]."""
        return max(0.0, self.estimate - z * self.stderr), min(1.0, self.estimate + z * self.stderr)


class ConcentrationSample(BaseModel):
    """Realizations of ||A(X)||^2 over fresh ensembles."""

    K: int
    ensemble: EnsembleKind
    values: list[float]
    mean: float
    variance: float

    @model_validator(mode="after")
    def _check_values(self) -> "ConcentrationSample":
        if any(value < 0.0 for value in self.values):
            raise ValueError("statistics must be non-negative")
        return self
