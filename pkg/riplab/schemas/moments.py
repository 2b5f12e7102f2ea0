from enum import Enum

from pydantic import BaseModel, Field


class MomentEstimate(BaseModel):
    """Monte Carlo estimate of E|u^H X v|^{2t}."""

    t: int = Field(..., ge=0, description="Moment order (power 2t)")
    mean: float = Field(..., ge=0.0)
    stderr: float = Field(..., ge=0.0)
    samples: int = Field(..., ge=1)


class DominanceRow(BaseModel):
    """One (matrix, t) comparison against the all-ones moment."""

    matrix_id: int = Field(..., ge=0)
    t: int = Field(..., ge=0)
    mc_mean: float
    mc_stderr: float
    exact_all_ones: float
    margin: float = Field(..., description="exact - (mc + 3 stderr)")
    dominated: bool = Field(..., description="mc - 3 stderr <= exact")


class DominanceReport(BaseModel):
    """Monte Carlo moments of random unit-Frobenius matrices vs the all-ones majorant."""

    M: int
    N: int
    samples: int
    rows: list[DominanceRow]

    @property
    def all_dominated(self) -> bool:
        return all(row.dominated for row in self.rows)


class ProductDistribution(str, Enum):
    """Non-negative sampling laws for the moment-product check."""

    SQUARED_GAUSSIAN = "squared_gaussian"
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"
    CONSTANT = "constant"


class DistributionSpec(BaseModel):
    """Law of each X_n; `scales` gives one scale per variable."""

    kind: ProductDistribution
    scales: list[float] = Field(..., min_length=1, description="Per-variable scale (or value)")


class MomentProductReport(BaseModel):
    """Result of checking E[prod X_n^{k_n}] <= max_n E[X_n^t]."""

    exponents: list[int]
    t: int
    product_mean: float
    product_stderr: float
    power_means: list[float] = Field(..., description="E[X_n^t] per variable")
    power_stderrs: list[float]
    holder_bound: float = Field(..., description="prod_n (E[X_n^t])^{k_n/t}")
    max_index: int
    holds: bool


class VectorCaseRow(BaseModel):
    """E|x^T v|^{2m} estimate vs the uniform-vector value g(m,N)/N^m."""

    m: int
    estimate: MomentEstimate
    uniform_value: float
    dominated: bool
