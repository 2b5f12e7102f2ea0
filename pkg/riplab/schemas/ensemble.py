from enum import Enum
from functools import cached_property
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

TWO_PI = 2.0 * np.pi


def _read_only(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class EnsembleKind(str, Enum):
    """Measurement ensemble kinds (also the CSV spelling)."""

    UNIT_MODULUS = "unitmod"
    GAUSSIAN = "gaussian"


class EnsembleBase(BaseModel):
    """Dimensions shared by every ensemble kind."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    M: int = Field(..., ge=1, description="Row dimension of X")
    N: int = Field(..., ge=1, description="Column dimension of X")
    K: int = Field(..., ge=1, description="Number of measurements")


class UnitModulusEnsemble(EnsembleBase):
    """Rank-one ensemble A_k = u_k v_k^H with u_k = exp(j theta_k), v_k = exp(j phi_k).

    Only the phases are stored.
    """

    kind: Literal[EnsembleKind.UNIT_MODULUS] = EnsembleKind.UNIT_MODULUS
    theta: np.ndarray = Field(..., description="K x M phases in radians, [0, 2pi)")
    phi: np.ndarray = Field(..., description="K x N phases in radians, [0, 2pi)")

    @model_validator(mode="after")
    def _check_phases(self) -> "UnitModulusEnsemble":
        if self.theta.shape != (self.K, self.M):
            raise ValueError(f"theta must be {self.K}x{self.M}, got {self.theta.shape}")
        if self.phi.shape != (self.K, self.N):
            raise ValueError(f"phi must be {self.K}x{self.N}, got {self.phi.shape}")
        for name, phases in (("theta", self.theta), ("phi", self.phi)):
            if phases.dtype != np.float64:
                raise ValueError(f"{name} must be float64 radians")
            if np.any(phases < 0.0) or np.any(phases >= TWO_PI):
                raise ValueError(f"{name} has phases outside [0, 2pi)")
        return self

    @cached_property
    def u(self) -> np.ndarray:
        """K x M matrix whose row k is u_k, computed once per ensemble."""
        return _read_only(np.exp(1j * self.theta))

    @cached_property
    def v(self) -> np.ndarray:
        """K x N matrix whose row k is v_k, computed once per ensemble."""
        return _read_only(np.exp(1j * self.phi))


class GaussianEnsemble(EnsembleBase):
    """Dense ensemble with iid unit-variance complex Gaussian entries."""

    kind: Literal[EnsembleKind.GAUSSIAN] = EnsembleKind.GAUSSIAN
    matrices: np.ndarray = Field(..., description="K x M x N complex128 measurement matrices")

    @model_validator(mode="after")
    def _check_matrices(self) -> "GaussianEnsemble":
        if self.matrices.shape != (self.K, self.M, self.N):
            raise ValueError(
                f"matrices must be {self.K}x{self.M}x{self.N}, got {self.matrices.shape}"
            )
        if self.matrices.dtype != np.complex128:
            raise ValueError("matrices must be complex128")
        return self


MeasurementEnsemble = Annotated[
    Union[UnitModulusEnsemble, GaussianEnsemble],
    Field(discriminator="kind"),
]
