import numpy as np
import pytest

from riplab.errors import InvalidArgumentError
from riplab.schemas.ensemble import EnsembleKind, UnitModulusEnsemble
from riplab.schemas.rng import RngStream
from riplab.services import measurement_service
from riplab.services.measurement_service import (
    add_measurement_noise,
    apply,
    apply_adjoint,
    ensemble_from_bytes,
    ensemble_storage_bytes,
    ensemble_to_bytes,
    gram_matrix,
    load_ensemble,
    measurement_matrix,
    random_low_rank_matrix,
    random_unit_frobenius_matrix,
    sample_ensemble,
    sample_gaussian_ensemble,
    sample_unit_modulus_ensemble,
    sample_unit_modulus_vector,
    save_ensemble,
)

KINDS = list(EnsembleKind)


def zero_phase_ensemble(M: int, N: int, K: int) -> UnitModulusEnsemble:
    return UnitModulusEnsemble(M=M, N=N, K=K, theta=np.zeros((K, M)), phi=np.zeros((K, N)))


# ==================== SAMPLING ====================


def test_unit_modulus_vector_entries_have_modulus_one(rng):
    x = sample_unit_modulus_vector(3, rng)
    np.testing.assert_allclose(np.abs(x), 1.0, atol=1e-12)


def test_unit_modulus_vector_with_zero_phase(rng, monkeypatch):
    monkeypatch.setattr(
        measurement_service, "draw_phases", lambda generator, shape: np.zeros(shape)
    )
    np.testing.assert_array_equal(sample_unit_modulus_vector(1, rng), [1 + 0j])


def test_unit_modulus_vector_rejects_zero_dimension(rng):
    with pytest.raises(InvalidArgumentError):
        sample_unit_modulus_vector(0, rng)


def test_unit_modulus_phase_mean_vanishes(rng):
    draws = 100_000
    ensemble = sample_unit_modulus_ensemble(1, 1, draws, rng)
    first = ensemble.u[:, 0]
    bound = 3 / np.sqrt(draws)
    assert abs(first.real.mean()) < bound
    assert abs(first.imag.mean()) < bound


def test_unit_modulus_ensemble_shapes_and_determinism(rng):
    ensemble = sample_unit_modulus_ensemble(2, 2, 3, rng)
    assert ensemble.theta.shape == (3, 2)
    assert ensemble.phi.shape == (3, 2)
    again = sample_unit_modulus_ensemble(2, 2, 3, rng)
    assert np.array_equal(ensemble.theta, again.theta)
    assert np.array_equal(ensemble.phi, again.phi)
    assert np.all((ensemble.theta >= 0) & (ensemble.theta < 2 * np.pi))


def test_unit_modulus_ensemble_is_read_only(rng):
    ensemble = sample_unit_modulus_ensemble(2, 3, 4, rng)
    with pytest.raises(ValueError):
        ensemble.theta[0, 0] = 1.0


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, 0, 2), (2, 2, 0)])
@pytest.mark.parametrize("kind", KINDS)
def test_sampling_rejects_zero_dimension(rng, kind, dims):
    with pytest.raises(InvalidArgumentError):
        sample_ensemble(kind, *dims, rng)


def test_gaussian_entries_have_unit_variance(rng):
    ensemble = sample_gaussian_ensemble(10, 10, 10_000, rng)
    second_moment = np.mean(np.abs(ensemble.matrices) ** 2)
    assert second_moment == pytest.approx(1.0, rel=0.01)


def test_gaussian_ensemble_shape_and_determinism(rng):
    single = sample_gaussian_ensemble(1, 1, 1, rng)
    assert single.matrices.shape == (1, 1, 1)
    first = sample_gaussian_ensemble(3, 4, 5, rng)
    second = sample_gaussian_ensemble(3, 4, 5, rng)
    assert np.array_equal(first.matrices, second.matrices)


def test_different_streams_give_different_ensembles():
    a = sample_unit_modulus_ensemble(3, 3, 3, RngStream.for_trial(1, "exp", 0))
    b = sample_unit_modulus_ensemble(3, 3, 3, RngStream.for_trial(1, "exp", 1))
    assert not np.array_equal(a.theta, b.theta)


# ==================== OPERATOR ====================


def test_apply_with_zero_phases_sums_entries():
    ensemble = zero_phase_ensemble(2, 2, 1)
    X = np.zeros((2, 2), dtype=complex)
    X[0, 0] = 1.0
    np.testing.assert_allclose(apply(ensemble, X), [1.0])


@pytest.mark.parametrize("kind", KINDS)
def test_apply_of_zero_is_zero(rng, kind):
    ensemble = sample_ensemble(kind, 3, 4, 5, rng)
    assert np.all(apply(ensemble, np.zeros((3, 4))) == 0)


@pytest.mark.parametrize("kind", KINDS)
def test_apply_rejects_dimension_mismatch(rng, kind):
    ensemble = sample_ensemble(kind, 3, 4, 5, rng)
    with pytest.raises(InvalidArgumentError):
        apply(ensemble, np.zeros((4, 3)))
    with pytest.raises(InvalidArgumentError):
        apply_adjoint(ensemble, np.zeros(4))


@pytest.mark.parametrize("kind", KINDS)
def test_apply_is_linear(rng, kind, random_matrix, generator):
    ensemble = sample_ensemble(kind, 5, 6, 7, rng)
    X1, X2 = random_matrix(5, 6), random_matrix(5, 6)
    a, b = generator.standard_normal(2) + 1j * generator.standard_normal(2)
    combined = apply(ensemble, a * X1 + b * X2)
    expected = a * apply(ensemble, X1) + b * apply(ensemble, X2)
    np.testing.assert_allclose(combined, expected, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("kind", KINDS)
def test_adjoint_identity(kind, seed):
    stream = RngStream.for_trial(seed, "adjoint", 0)
    generator = stream.child("data").generator()
    ensemble = sample_ensemble(kind, 6, 5, 9, stream)
    X = generator.standard_normal((6, 5)) + 1j * generator.standard_normal((6, 5))
    y = generator.standard_normal(9) + 1j * generator.standard_normal(9)
    lhs = np.vdot(y, apply(ensemble, X))
    rhs = np.vdot(apply_adjoint(ensemble, y), X)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_adjoint_with_zero_phases_is_all_ones():
    ensemble = zero_phase_ensemble(3, 4, 1)
    np.testing.assert_allclose(apply_adjoint(ensemble, np.array([1.0])), np.ones((3, 4)))


@pytest.mark.parametrize("kind", KINDS)
def test_adjoint_of_zero_is_zero(rng, kind):
    ensemble = sample_ensemble(kind, 3, 4, 5, rng)
    assert np.all(apply_adjoint(ensemble, np.zeros(5)) == 0)


def test_factored_apply_matches_materialized(rng, random_matrix):
    ensemble = sample_unit_modulus_ensemble(8, 7, 12, rng)
    X = random_matrix(8, 7)
    materialized = np.array(
        [np.trace(measurement_matrix(ensemble, k).conj().T @ X) for k in range(12)]
    ) / np.sqrt(12)
    np.testing.assert_allclose(apply(ensemble, X), materialized, rtol=0, atol=1e-12)


def test_measurement_matrix_entries_have_modulus_one(rng):
    ensemble = sample_unit_modulus_ensemble(4, 5, 3, rng)
    for k in range(3):
        np.testing.assert_allclose(np.abs(measurement_matrix(ensemble, k)), 1.0, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        measurement_matrix(ensemble, 3)


@pytest.mark.parametrize("kind", KINDS)
def test_isometry_in_expectation(kind):
    X = random_unit_frobenius_matrix(4, 5, RngStream(master_seed=3))
    trials = 10_000
    norms = np.empty(trials)
    for i in range(trials):
        ensemble = sample_ensemble(kind, 4, 5, 4, RngStream.for_trial(3, "iso", i))
        norms[i] = np.linalg.norm(apply(ensemble, X)) ** 2
    stderr = norms.std(ddof=1) / np.sqrt(trials)
    assert abs(norms.mean() - 1.0) <= 3 * stderr


# ==================== GRAM ====================


def test_gram_diagonal_for_unit_modulus(rng):
    ensemble = sample_unit_modulus_ensemble(4, 6, 10, rng)
    gram = gram_matrix(ensemble)
    np.testing.assert_allclose(np.diag(gram), 4 * 6 / 10, rtol=1e-12)
    np.testing.assert_allclose(gram, gram.conj().T, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_gram_composes_apply_and_adjoint(rng, kind, generator):
    ensemble = sample_ensemble(kind, 4, 5, 8, rng)
    y = generator.standard_normal(8) + 1j * generator.standard_normal(8)
    expected = apply(ensemble, apply_adjoint(ensemble, y))
    np.testing.assert_allclose(gram_matrix(ensemble) @ y, expected, rtol=1e-10, atol=1e-10)
    assert np.linalg.eigvalsh(gram_matrix(ensemble)).min() > -1e-10


# ==================== STORAGE ====================


def test_storage_bytes_match_full_scale_counts(rng):
    unit = sample_unit_modulus_ensemble(40, 80, 1000, rng)
    gaussian = sample_gaussian_ensemble(40, 80, 1000, rng)
    assert ensemble_storage_bytes(unit) == 960_000
    assert ensemble_storage_bytes(gaussian) == 51_200_000
    assert ensemble_storage_bytes(unit) / ensemble_storage_bytes(gaussian) == pytest.approx(3 / 160)


@pytest.mark.parametrize("kind", KINDS)
def test_bytes_preserve_ensemble(rng, kind, random_matrix):
    ensemble = sample_ensemble(kind, 3, 4, 5, rng)
    data = ensemble_to_bytes(ensemble)
    assert data[:8] == b"RIPLAB01"
    assert len(data) == 33 + ensemble_storage_bytes(ensemble)
    restored = ensemble_from_bytes(data)
    X = random_matrix(3, 4)
    assert restored.kind == ensemble.kind
    assert np.array_equal(apply(restored, X), apply(ensemble, X))


def test_save_and_load(tmp_path, rng):
    ensemble = sample_unit_modulus_ensemble(3, 2, 4, rng)
    path = tmp_path / "ensemble.bin"
    written = save_ensemble(ensemble, path)
    assert written == path.stat().st_size
    restored = load_ensemble(path)
    assert np.array_equal(restored.theta, ensemble.theta)
    assert np.array_equal(restored.phi, ensemble.phi)


def test_corrupt_bytes_are_rejected(rng):
    data = ensemble_to_bytes(sample_unit_modulus_ensemble(2, 2, 2, rng))
    with pytest.raises(InvalidArgumentError):
        ensemble_from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(InvalidArgumentError):
        ensemble_from_bytes(data[:-8])
    with pytest.raises(InvalidArgumentError):
        ensemble_from_bytes(data[:8] + bytes([7]) + data[9:])


# ==================== GENERATORS ====================


def test_noise_free_measurements_are_unchanged(rng):
    y = np.arange(4, dtype=complex)
    np.testing.assert_array_equal(add_measurement_noise(y, 0.0, rng), y)
    with pytest.raises(InvalidArgumentError):
        add_measurement_noise(y, -1.0, rng)


def test_noise_has_requested_variance(rng):
    y = np.zeros(200_000, dtype=complex)
    noise = add_measurement_noise(y, 0.5, rng)
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.25, rel=0.02)


def test_low_rank_truth_has_unit_norm_and_rank(rng):
    X = random_low_rank_matrix(6, 8, 2, rng)
    assert np.linalg.norm(X) == pytest.approx(1.0)
    assert np.linalg.matrix_rank(X, tol=1e-10) == 2
    with pytest.raises(InvalidArgumentError):
        random_low_rank_matrix(3, 4, 4, rng)


def test_phasors_are_computed_once_and_read_only(rng):
    ensemble = sample_unit_modulus_ensemble(3, 4, 5, rng)
    assert ensemble.u is ensemble.u
    assert ensemble.v is ensemble.v
    np.testing.assert_allclose(ensemble.v, np.exp(1j * ensemble.phi))
    with pytest.raises(ValueError):
        ensemble.u[0, 0] = 0.0
