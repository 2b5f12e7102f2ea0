"""Dense linear algebra plumbing for the recovery solvers."""

import logging
from collections.abc import Callable
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

from riplab.errors import InvalidArgumentError, NumericalFailureError
from riplab.schemas.arrays import ComplexMatrix, RealArray, as_complex_matrix

logger = logging.getLogger(__name__)


class TruncatedSVD(NamedTuple):
    U: ComplexMatrix
    s: RealArray
    V: ComplexMatrix

    def matrix(self) -> ComplexMatrix:
        return (self.U * self.s) @ self.V.conj().T


def _thin_svd(X: ComplexMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(X, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        logger.debug("gesdd failed on %s matrix, retrying with gesvd", X.shape)
    try:
        return scipy.linalg.svd(X, full_matrices=False, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailureError(f"SVD did not converge on a {X.shape} matrix") from e


def truncated_svd(X: ComplexMatrix, r: int, tol: float = 1e-9) -> TruncatedSVD:
    """Best rank-r factorization U diag(s) V^H with s non-increasing."""
    X = as_complex_matrix(X)
    if not 1 <= r <= min(X.shape):
        raise InvalidArgumentError(f"rank must lie in [1, {min(X.shape)}], got {r}")
    U, s, Vh = _thin_svd(X)
    U, s, V = U[:, :r], s[:r], Vh[:r].conj().T
    identity = np.eye(r)
    if (
        np.linalg.norm(U.conj().T @ U - identity) > tol
        or np.linalg.norm(V.conj().T @ V - identity) > tol
    ):
        raise NumericalFailureError("SVD factors lost orthonormality")
    return TruncatedSVD(U=U, s=s, V=V)


def singular_value_threshold(X: ComplexMatrix, level: float) -> ComplexMatrix:
    """Proximal operator of level * ||.||_*: shrink every singular value by `level`."""
    if level < 0:
        raise InvalidArgumentError(f"threshold must be >= 0, got {level}")
    U, s, Vh = _thin_svd(X)
    shrunk = np.maximum(s - level, 0.0)
    keep = shrunk > 0
    return (U[:, keep] * shrunk[keep]) @ Vh[keep]


def conjugate_gradient(
    operator: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iters: int = 200,
) -> np.ndarray:
    """Solve H x = rhs for a Hermitian positive definite H given as a matvec.

    Arrays of any shape are solved in flattened form; hitting max_iters returns the last iterate.
    """
    shape = rhs.shape
    size = rhs.size
    linear_operator = LinearOperator(
        (size, size),
        matvec=lambda x: operator(x.reshape(shape)).ravel(),
        dtype=np.complex128,
    )
    start = None if x0 is None else x0.ravel()
    solution, info = cg(
        linear_operator, rhs.ravel(), x0=start, rtol=tol, atol=0.0, maxiter=max_iters
    )
    if info < 0 or not np.all(np.isfinite(solution)):
        raise NumericalFailureError(f"conjugate gradient broke down (info={info})")
    if info > 0:
        logger.debug("CG stopped after %d iterations without reaching rtol=%g", info, tol)
    return solution.reshape(shape)
