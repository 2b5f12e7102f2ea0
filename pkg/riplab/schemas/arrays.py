"""Dense complex array conventions and their validators."""

import numpy as np
import numpy.typing as npt

from riplab.errors import InvalidArgumentError

ComplexMatrix = npt.NDArray[np.complex128]
ComplexVector = npt.NDArray[np.complex128]
RealArray = npt.NDArray[np.float64]


def as_complex_matrix(value: npt.ArrayLike, name: str = "X") -> ComplexMatrix:
    """Coerce to a 2-D complex128 array with finite entries."""
    array = np.asarray(value, dtype=np.complex128)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty matrix, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} has NaN or infinite entries")
    return array


def as_complex_vector(value: npt.ArrayLike, name: str = "y") -> ComplexVector:
    """Coerce to a 1-D complex128 array with finite entries."""
    array = np.asarray(value, dtype=np.complex128)
    if array.ndim != 1 or array.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} has NaN or infinite entries")
    return array


def frozen(array: np.ndarray) -> np.ndarray:
    """Mark an array read-only so it can be shared across workers."""
    array.setflags(write=False)
    return array
