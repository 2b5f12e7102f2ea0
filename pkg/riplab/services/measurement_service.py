"""Measurement service - sampling, applying and serializing the linear map A(.)."""

import logging
import struct
from pathlib import Path

import numpy as np

from riplab.config import settings
from riplab.errors import InvalidArgumentError
from riplab.schemas.arrays import (
    ComplexMatrix,
    ComplexVector,
    as_complex_matrix,
    as_complex_vector,
    frozen,
)
from riplab.schemas.ensemble import (
    TWO_PI,
    EnsembleKind,
    GaussianEnsemble,
    MeasurementEnsemble,
    UnitModulusEnsemble,
)
from riplab.schemas.rng import RngStream

logger = logging.getLogger(__name__)

MAGIC = b"RIPLAB01"
# magic, kind byte, M, N, K (little-endian uint64)
HEADER = struct.Struct("<8sBQQQ")
KIND_CODES = {EnsembleKind.UNIT_MODULUS: 0, EnsembleKind.GAUSSIAN: 1}


def _check_dims(**dims: int) -> None:
    for name, value in dims.items():
        if value < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")


def draw_phases(generator: np.random.Generator, shape: int | tuple[int, ...]) -> np.ndarray:
    """Independent phases uniform on [0, 2pi)."""
    phases = generator.uniform(0.0, TWO_PI, size=shape)
    # uniform() can round up to the open end
    return np.where(phases >= TWO_PI, phases - TWO_PI, phases)


def draw_complex_gaussian(
    generator: np.random.Generator, shape: int | tuple[int, ...], std: float = 1.0
) -> np.ndarray:
    """Circular complex Gaussian with E|z|^2 = std^2 (real/imag variance std^2/2 each)."""
    scale = std / np.sqrt(2.0)
    return scale * (generator.standard_normal(shape) + 1j * generator.standard_normal(shape))


def sample_unit_modulus_vector(dim: int, rng: RngStream) -> ComplexVector:
    """Vector with entries exp(j theta), theta iid uniform on [0, 2pi)."""
    _check_dims(dim=dim)
    return np.exp(1j * draw_phases(rng.generator(), dim))


def sample_unit_modulus_ensemble(M: int, N: int, K: int, rng: RngStream) -> UnitModulusEnsemble:
    """Draw K independent (u_k, v_k) pairs, storing only their phases."""
    _check_dims(M=M, N=N, K=K)
    generator = rng.generator()
    theta = frozen(draw_phases(generator, (K, M)))
    phi = frozen(draw_phases(generator, (K, N)))
    return UnitModulusEnsemble(M=M, N=N, K=K, theta=theta, phi=phi)


def sample_gaussian_ensemble(M: int, N: int, K: int, rng: RngStream) -> GaussianEnsemble:
    """Draw K dense M x N matrices with iid unit-variance complex Gaussian entries."""
    _check_dims(M=M, N=N, K=K)
    matrices = frozen(draw_complex_gaussian(rng.generator(), (K, M, N)))
    return GaussianEnsemble(M=M, N=N, K=K, matrices=matrices)


def sample_ensemble(
    kind: EnsembleKind, M: int, N: int, K: int, rng: RngStream
) -> MeasurementEnsemble:
    if kind == EnsembleKind.UNIT_MODULUS:
        return sample_unit_modulus_ensemble(M, N, K, rng)
    return sample_gaussian_ensemble(M, N, K, rng)


def apply(ensemble: MeasurementEnsemble, X: ComplexMatrix) -> ComplexVector:
    """[A(X)]_k = <A_k, X> / sqrt(K) = tr(A_k^H X) / sqrt(K).

    For the unit-modulus kind this is u_k^H X v_k, evaluated from the factors.
    """
    X = as_complex_matrix(X)
    if X.shape != (ensemble.M, ensemble.N):
        raise InvalidArgumentError(
            f"X must be {ensemble.M}x{ensemble.N} to match the ensemble, got {X.shape}"
        )
    scale = 1.0 / np.sqrt(ensemble.K)
    if isinstance(ensemble, UnitModulusEnsemble):
        left = ensemble.u.conj() @ X
        return scale * np.einsum("kn,kn->k", left, ensemble.v)
    return scale * np.einsum("kmn,mn->k", ensemble.matrices.conj(), X)


def apply_adjoint(ensemble: MeasurementEnsemble, y: ComplexVector) -> ComplexMatrix:
    """A*(y) = sum_k y_k A_k / sqrt(K)."""
    y = as_complex_vector(y)
    if y.shape[0] != ensemble.K:
        raise InvalidArgumentError(f"y must have length K={ensemble.K}, got {y.shape[0]}")
    scale = 1.0 / np.sqrt(ensemble.K)
    if isinstance(ensemble, UnitModulusEnsemble):
        return scale * ((ensemble.u.T * y) @ ensemble.v.conj())
    return scale * np.einsum("k,kmn->mn", y, ensemble.matrices)


def measurement_matrix(ensemble: MeasurementEnsemble, k: int) -> ComplexMatrix:
    """Materialize A_k."""
    if not 0 <= k < ensemble.K:
        raise InvalidArgumentError(f"measurement index {k} out of range [0, {ensemble.K})")
    if isinstance(ensemble, UnitModulusEnsemble):
        return np.outer(ensemble.u[k], ensemble.v[k].conj())
    return np.array(ensemble.matrices[k])


def gram_matrix(ensemble: MeasurementEnsemble) -> np.ndarray:
    """G_jk = <A_j, A_k> / K, so that G y = A(A*(y))."""
    if isinstance(ensemble, UnitModulusEnsemble):
        u, v = ensemble.u, ensemble.v
        # <u_j v_j^H, u_k v_k^H> = (u_j^H u_k)(v_k^H v_j)
        gram = (u.conj() @ u.T) * (v @ v.conj().T)
    else:
        flat = ensemble.matrices.reshape(ensemble.K, -1)
        gram = flat.conj() @ flat.T
    gram /= ensemble.K
    # exact Hermitian symmetry
    return 0.5 * (gram + gram.conj().T)


def ensemble_storage_bytes(
    ensemble: MeasurementEnsemble, scalar_width: int = settings.scalar_width
) -> int:
    """Serialized payload size: K(M+N) phases or 2KMN real parts."""
    if isinstance(ensemble, UnitModulusEnsemble):
        return ensemble.K * (ensemble.M + ensemble.N) * scalar_width
    return 2 * ensemble.K * ensemble.M * ensemble.N * scalar_width


def add_measurement_noise(y: ComplexVector, sigma: float, rng: RngStream) -> ComplexVector:
    """y + z with z circular complex Gaussian of standard deviation sigma."""
    y = as_complex_vector(y)
    if sigma < 0:
        raise InvalidArgumentError(f"noise standard deviation must be >= 0, got {sigma}")
    if sigma == 0:
        return y
    return y + draw_complex_gaussian(rng.generator(), y.shape, std=sigma)


def random_unit_frobenius_matrix(M: int, N: int, rng: RngStream) -> ComplexMatrix:
    """Complex Gaussian matrix scaled to ||X||_F = 1."""
    _check_dims(M=M, N=N)
    X = draw_complex_gaussian(rng.generator(), (M, N))
    return X / np.linalg.norm(X)


def random_low_rank_matrix(M: int, N: int, r: int, rng: RngStream) -> ComplexMatrix:
    """X = G1 G2^H with iid complex Gaussian factors, normalized to ||X||_F = 1."""
    _check_dims(M=M, N=N, r=r)
    if r > min(M, N):
        raise InvalidArgumentError(f"rank {r} exceeds min(M, N) = {min(M, N)}")
    generator = rng.generator()
    left = draw_complex_gaussian(generator, (M, r))
    right = draw_complex_gaussian(generator, (N, r))
    X = left @ right.conj().T
    return X / np.linalg.norm(X)


def all_ones_matrix(M: int, N: int) -> ComplexMatrix:
    """The normalized all-ones matrix 11^T / sqrt(MN)."""
    return np.full((M, N), 1.0 / np.sqrt(M * N), dtype=np.complex128)


# ==================== SERIALIZATION ====================


def ensemble_to_bytes(ensemble: MeasurementEnsemble) -> bytes:
    """Header followed by the little-endian float64 payload."""
    header = HEADER.pack(MAGIC, KIND_CODES[ensemble.kind], ensemble.M, ensemble.N, ensemble.K)
    if isinstance(ensemble, UnitModulusEnsemble):
        payload = np.concatenate([ensemble.theta.ravel(), ensemble.phi.ravel()])
    else:
        # k, then row-major, real/imag interleaved
        payload = ensemble.matrices.view(np.float64).ravel()
    return header + payload.astype("<f8").tobytes()


def ensemble_from_bytes(data: bytes) -> MeasurementEnsemble:
    if len(data) < HEADER.size:
        raise InvalidArgumentError("ensemble data is shorter than its header")
    magic, kind_code, M, N, K = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidArgumentError(f"bad ensemble magic {magic!r}")
    kinds = {code: kind for kind, code in KIND_CODES.items()}
    if kind_code not in kinds:
        raise InvalidArgumentError(f"unknown ensemble kind byte {kind_code}")
    _check_dims(M=M, N=N, K=K)
    kind = kinds[kind_code]
    scalars = K * (M + N) if kind == EnsembleKind.UNIT_MODULUS else 2 * K * M * N
    payload = data[HEADER.size :]
    if len(payload) != scalars * 8:
        raise InvalidArgumentError(
            f"ensemble payload has {len(payload)} bytes, expected {scalars * 8}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if kind == EnsembleKind.UNIT_MODULUS:
        theta = frozen(values[: K * M].reshape(K, M).copy())
        phi = frozen(values[K * M :].reshape(K, N).copy())
        try:
            return UnitModulusEnsemble(M=M, N=N, K=K, theta=theta, phi=phi)
        except ValueError as e:
            raise InvalidArgumentError(f"corrupt unit-modulus payload: {e}") from e
    matrices = frozen(values.view(np.complex128).reshape(K, M, N).copy())
    return GaussianEnsemble(M=M, N=N, K=K, matrices=matrices)


def save_ensemble(ensemble: MeasurementEnsemble, path: Path) -> int:
    """Write the ensemble file; returns the number of bytes written."""
    data = ensemble_to_bytes(ensemble)
    Path(path).write_bytes(data)
    logger.debug("Saved %s ensemble (%d bytes) to %s", ensemble.kind.value, len(data), path)
    return len(data)


def load_ensemble(path: Path) -> MeasurementEnsemble:
    return ensemble_from_bytes(Path(path).read_bytes())
