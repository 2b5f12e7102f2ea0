import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from riplab.errors import InvalidArgumentError, NumericalFailureError
from riplab.schemas.ensemble import EnsembleKind, UnitModulusEnsemble
from riplab.schemas.recovery import FactorPair, Solver, SolverOptions, SweepConfig
from riplab.schemas.rng import RngStream
from riplab.services import recovery_service
from riplab.services.linalg import conjugate_gradient, singular_value_threshold, truncated_svd
from riplab.services.measurement_service import (
    apply,
    random_low_rank_matrix,
    sample_ensemble,
    sample_unit_modulus_ensemble,
)
from riplab.services.recovery_service import (
    altmin_recover,
    balanced_factors,
    factored_gd_recover,
    factored_loss,
    nuclear_norm_recover,
    recover,
    recovery_phase_sweep,
    relative_error,
    spectral_init,
    wirtinger_gradients,
)

KINDS = list(EnsembleKind)


def instance(kind: EnsembleKind, M: int, N: int, r: int, K: int, seed: int):
    stream = RngStream.for_trial(seed, "recovery-test", 0)
    truth = random_low_rank_matrix(M, N, r, stream.child("truth"))
    ensemble = sample_ensemble(kind, M, N, K, stream.child("ensemble"))
    return ensemble, truth, apply(ensemble, truth)


# ==================== LINEAR ALGEBRA ====================


def test_truncated_svd_of_diagonal():
    svd = truncated_svd(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(svd.s, [3.0])
    assert np.linalg.norm(np.diag([3.0, 1.0]) - svd.matrix()) == pytest.approx(1.0)


def test_truncated_svd_of_rank_one(generator):
    a = generator.standard_normal(5) + 1j * generator.standard_normal(5)
    b = generator.standard_normal(4) + 1j * generator.standard_normal(4)
    X = np.outer(a, b.conj())
    svd = truncated_svd(X, 1)
    np.testing.assert_allclose(svd.s, [np.linalg.norm(a) * np.linalg.norm(b)])
    np.testing.assert_allclose(svd.matrix(), X, atol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_truncated_svd_is_orthonormal_and_optimal(seed):
    generator = np.random.default_rng(seed)
    M, N = (int(x) for x in generator.integers(1, 9, 2))
    r = int(generator.integers(1, min(M, N) + 1))
    X = generator.standard_normal((M, N)) + 1j * generator.standard_normal((M, N))
    svd = truncated_svd(X, r)
    assert np.linalg.norm(svd.U.conj().T @ svd.U - np.eye(r)) <= 1e-9
    assert np.linalg.norm(svd.V.conj().T @ svd.V - np.eye(r)) <= 1e-9
    assert np.all(np.diff(svd.s) <= 0)
    eigenvalues = np.sort(np.linalg.eigvalsh(X.conj().T @ X))[::-1][: min(M, N)]
    np.testing.assert_allclose(svd.s**2, eigenvalues[:r], rtol=1e-8, atol=1e-12)
    best = math.sqrt(max(float(eigenvalues[r:].sum()), 0.0))
    assert np.linalg.norm(X - svd.matrix()) <= best + 1e-9 * np.linalg.norm(X)


def test_truncated_svd_rejects_bad_rank(random_matrix):
    with pytest.raises(InvalidArgumentError):
        truncated_svd(random_matrix(3, 4), 4)
    with pytest.raises(InvalidArgumentError):
        truncated_svd(random_matrix(3, 4), 0)


def test_singular_value_threshold_shrinks(generator):
    X = np.diag([3.0, 1.0, 0.5]).astype(complex)
    np.testing.assert_allclose(singular_value_threshold(X, 0.75), np.diag([2.25, 0.25, 0.0]))
    assert np.all(singular_value_threshold(X, 5.0) == 0)
    with pytest.raises(InvalidArgumentError):
        singular_value_threshold(X, -1.0)


def test_conjugate_gradient_solves_hermitian_system(generator):
    B = generator.standard_normal((6, 6)) + 1j * generator.standard_normal((6, 6))
    H = B.conj().T @ B + np.eye(6)
    rhs = (generator.standard_normal(6) + 1j * generator.standard_normal(6)).reshape(2, 3)
    x = conjugate_gradient(lambda v: (H @ v.ravel()).reshape(2, 3), rhs, tol=1e-12)
    np.testing.assert_allclose(H @ x.ravel(), rhs.ravel(), atol=1e-9)


# ==================== HELPERS ====================


def test_relative_error_examples(random_matrix):
    X = random_matrix(3, 4)
    assert relative_error(X, X) == 0.0
    assert relative_error(np.zeros((3, 4)), X) == pytest.approx(1.0)
    assert relative_error(2 * X, X) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        relative_error(X, np.zeros((3, 4)))
    with pytest.raises(InvalidArgumentError):
        relative_error(X, random_matrix(4, 3))


def test_spectral_init_of_zero_measurements(rng):
    ensemble = sample_unit_modulus_ensemble(3, 4, 5, rng)
    assert np.all(spectral_init(ensemble, np.zeros(5), 1) == 0)


def test_spectral_init_with_zero_phases():
    ensemble = UnitModulusEnsemble(M=3, N=4, K=1, theta=np.zeros((1, 3)), phi=np.zeros((1, 4)))
    X0 = spectral_init(ensemble, np.array([1.0]), 1)
    np.testing.assert_allclose(X0, np.ones((3, 4)), atol=1e-12)
    assert truncated_svd(X0, 1).s[0] == pytest.approx(math.sqrt(12))


def test_spectral_init_is_informative():
    M, N, r = 16, 24, 2
    for seed in range(20):
        ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, M, N, r, 8 * (M + N) * r, seed)
        assert relative_error(spectral_init(ensemble, y, r), truth) < 1


def test_rank_above_dimensions_is_rejected(rng):
    ensemble, _, y = instance(EnsembleKind.UNIT_MODULUS, 3, 4, 1, 10, 0)
    with pytest.raises(InvalidArgumentError):
        altmin_recover(ensemble, y, 4)
    with pytest.raises(InvalidArgumentError):
        factored_gd_recover(ensemble, y[:5], 1)


# ==================== ALTERNATING MINIMIZATION ====================


def test_altmin_with_zero_measurements(rng):
    ensemble = sample_unit_modulus_ensemble(3, 4, 10, rng)
    result = altmin_recover(ensemble, np.zeros(10), 1)
    assert result.converged
    assert result.iterations <= 1
    assert np.all(result.X_hat == 0)


def test_altmin_started_at_truth_stays_there():
    ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 8, 10, 2, 120, 1)
    result = altmin_recover(ensemble, y, 2, truth=truth, init=balanced_factors(truth, 2))
    assert result.residual <= SolverOptions().tol * np.linalg.norm(y)
    assert result.rel_error <= 1e-8
    assert result.converged


@pytest.mark.parametrize("kind", KINDS)
def test_altmin_recovers_low_rank_matrix(kind):
    ensemble, truth, y = instance(kind, 16, 24, 2, 480, 3)
    options = SolverOptions(tol=1e-10)
    result = altmin_recover(ensemble, y, 2, options, truth=truth)
    assert result.rel_error <= 1e-6
    assert len(result.residual_trace) == result.iterations
    assert len(result.error_trace) == result.iterations
    slack = 10 * options.inner_cg_tol * np.linalg.norm(y)
    trace = result.residual_trace
    assert all(b <= a + slack for a, b in zip(trace, trace[1:]))


def test_altmin_reports_partial_trace_on_inner_failure(monkeypatch):
    ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 6, 7, 1, 60, 2)

    def broken(*args, **kwargs):
        raise NumericalFailureError("conjugate gradient broke down")

    monkeypatch.setattr(recovery_service, "conjugate_gradient", broken)
    with pytest.raises(NumericalFailureError) as excinfo:
        altmin_recover(ensemble, y, 1, truth=truth)
    assert excinfo.value.partial is not None
    assert excinfo.value.partial.iterations == 0


# ==================== FACTORED GRADIENT DESCENT ====================


def test_gradients_vanish_at_truth():
    ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 8, 10, 2, 120, 4)
    factors = balanced_factors(truth, 2)
    grad_L, grad_R = wirtinger_gradients(ensemble, y, factors.L, factors.R)
    assert np.linalg.norm(grad_L) <= 1e-10
    assert np.linalg.norm(grad_R) <= 1e-10


def numeric_gradient(loss, Z: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences: real part from real steps, imaginary part from imaginary steps."""
    gradient = np.zeros_like(Z)
    for index in np.ndindex(Z.shape):
        for direction in (1.0, 1j):
            bump = np.zeros_like(Z)
            bump[index] = step * direction
            slope = (loss(Z + bump) - loss(Z - bump)) / (2 * step)
            gradient[index] += direction * slope
    return gradient


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    stream = RngStream.for_trial(seed, "fd", 0)
    generator = stream.generator()
    ensemble = sample_unit_modulus_ensemble(4, 3, 30, stream.child("ensemble"))
    y = generator.standard_normal(30) + 1j * generator.standard_normal(30)
    L = generator.standard_normal((4, 2)) + 1j * generator.standard_normal((4, 2))
    R = generator.standard_normal((3, 2)) + 1j * generator.standard_normal((3, 2))
    grad_L, grad_R = wirtinger_gradients(ensemble, y, L, R)
    numeric_L = numeric_gradient(lambda Z: factored_loss(ensemble, y, Z, R), L)
    numeric_R = numeric_gradient(lambda Z: factored_loss(ensemble, y, L, Z), R)
    assert np.linalg.norm(numeric_L - grad_L) <= 1e-5 * np.linalg.norm(grad_L)
    assert np.linalg.norm(numeric_R - grad_R) <= 1e-5 * np.linalg.norm(grad_R)


def test_gradient_descent_with_zero_measurements(rng):
    ensemble = sample_unit_modulus_ensemble(3, 4, 10, rng)
    result = factored_gd_recover(ensemble, np.zeros(10), 1)
    assert result.converged
    assert np.all(result.X_hat == 0)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_descent_recovers_low_rank_matrix(kind):
    ensemble, truth, y = instance(kind, 16, 24, 2, 480, 5)
    result = factored_gd_recover(ensemble, y, 2, truth=truth)
    assert result.rel_error <= 1e-5
    assert result.iterations <= 2000


def test_gradient_descent_divergence_is_reported():
    ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 8, 10, 2, 120, 6)
    with pytest.raises(NumericalFailureError):
        factored_gd_recover(ensemble, y, 2, SolverOptions(step_size=50.0), truth=truth)


# ==================== NUCLEAR NORM ====================


def test_nuclear_norm_with_zero_measurements(rng):
    ensemble = sample_unit_modulus_ensemble(3, 4, 6, rng)
    result = nuclear_norm_recover(ensemble, np.zeros(6))
    assert result.converged
    assert np.all(result.X_hat == 0)


@pytest.mark.parametrize("kind", KINDS)
def test_nuclear_norm_iterates_stay_feasible(kind):
    ensemble, truth, y = instance(kind, 6, 8, 1, 24, 7)
    options = SolverOptions(max_iters=50)
    result = nuclear_norm_recover(ensemble, y, options, truth=truth)
    assert result.iterations == len(result.residual_trace) <= 50
    y_norm = np.linalg.norm(y)
    assert all(residual <= 1e-8 * y_norm for residual in result.residual_trace)
    if result.converged:
        assert result.residual <= options.tol * y_norm


def test_nuclear_norm_recovers_with_many_measurements():
    ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 8, 10, 1, 72, 8)
    result = nuclear_norm_recover(ensemble, y, SolverOptions(rho=5.0, max_iters=2000), truth=truth)
    assert result.rel_error <= 1e-3


def test_nuclear_norm_reports_indefinite_gram(monkeypatch, rng):
    ensemble = sample_unit_modulus_ensemble(2, 2, 3, rng)
    monkeypatch.setattr(recovery_service, "gram_matrix", lambda ensemble: -np.eye(ensemble.K))
    with pytest.raises(NumericalFailureError, match="ridge"):
        nuclear_norm_recover(ensemble, np.ones(3), SolverOptions(ridge=0.0))


# ==================== SWEEP ====================


def sweep_config(**overrides) -> SweepConfig:
    values = dict(
        M=5,
        N=6,
        r=1,
        K_values=[20, 28],
        solvers=list(Solver),
        ensembles=KINDS,
        trials=2,
        master_seed=11,
        options=SolverOptions(max_iters=30),
    )
    values.update(overrides)
    return SweepConfig(**values)


def test_sweep_covers_every_cell():
    rows = recovery_phase_sweep(sweep_config())
    assert len(rows) == 2 * 3 * 2 * 2
    assert [row.K for row in rows[:12]] == [20] * 12
    for row in rows:
        assert row.error is None
        assert row.rel_error >= 0
        assert row.residual >= 0


def test_sweep_does_not_depend_on_worker_count():
    serial = recovery_phase_sweep(sweep_config())
    with ThreadPoolExecutor(max_workers=4) as executor:
        parallel = recovery_phase_sweep(sweep_config(), executor)
    assert serial == parallel


def test_sweep_isolates_failed_cells(monkeypatch):
    original = recovery_service.recover

    def flaky(solver, *args, **kwargs):
        if solver == Solver.GD:
            raise NumericalFailureError("gradient descent diverged")
        return original(solver, *args, **kwargs)

    monkeypatch.setattr(recovery_service, "recover", flaky)
    rows = recovery_phase_sweep(sweep_config(K_values=[20]))
    failed = [row for row in rows if row.solver == Solver.GD]
    assert failed and all(math.isnan(row.rel_error) and row.error for row in failed)
    assert all(row.error is None for row in rows if row.solver != Solver.GD)


def test_sweep_truth_is_shared_across_solvers(monkeypatch):
    seen = {}
    original = recovery_service.recover

    def spy(solver, ensemble, y, r, options=None, truth=None):
        seen.setdefault(ensemble.kind, []).append(truth)
        return original(solver, ensemble, y, r, options, truth)

    monkeypatch.setattr(recovery_service, "recover", spy)
    recovery_phase_sweep(sweep_config(K_values=[20], trials=1))
    truths = [truth for group in seen.values() for truth in group]
    assert all(np.array_equal(truths[0], truth) for truth in truths)


def test_factor_pair_requires_matching_rank():
    with pytest.raises(ValueError):
        FactorPair(L=np.zeros((3, 2)), R=np.zeros((4, 1)))


@pytest.mark.slow
@pytest.mark.parametrize("kind", KINDS)
def test_nonconvex_parity_at_desk_scale(kind):
    altmin_errors, gd_errors = [], []
    for seed in range(20):
        ensemble, truth, y = instance(kind, 16, 24, 2, 480, 100 + seed)
        altmin_errors.append(
            altmin_recover(ensemble, y, 2, SolverOptions(tol=1e-10), truth=truth).rel_error
        )
        gd_errors.append(factored_gd_recover(ensemble, y, 2, truth=truth).rel_error)
    assert np.median(altmin_errors) <= 1e-6
    assert np.median(gd_errors) <= 1e-5


@pytest.mark.slow
def test_nuclear_norm_at_desk_scale():
    errors = []
    for seed in range(20):
        ensemble, truth, y = instance(EnsembleKind.UNIT_MODULUS, 16, 24, 2, 480, 200 + seed)
        errors.append(nuclear_norm_recover(ensemble, y, truth=truth).rel_error)
    assert np.median(errors) <= 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("solver", list(Solver))
@pytest.mark.parametrize("kind", KINDS)
def test_every_solver_recovers_on_both_ensembles(kind, solver):
    M, N, r = 16, 24, 2
    ensemble, truth, y = instance(kind, M, N, r, 8 * (M + N) * r, 300)
    options = SolverOptions(tol=1e-10) if solver == Solver.ALTMIN else SolverOptions()
    result = recover(solver, ensemble, y, r, options, truth=truth)
    assert result.rel_error <= 1e-3


@pytest.mark.slow
def test_phase_transition_at_full_scale():
    config = SweepConfig(
        M=40,
        N=80,
        r=5,
        K_values=list(range(400, 1501, 100)),
        solvers=[Solver.NUCLEAR],
        ensembles=KINDS,
        trials=5,
        master_seed=2024,
    )
    with ThreadPoolExecutor() as executor:
        rows = recovery_phase_sweep(config, executor)
    transitions = {}
    for kind in KINDS:
        medians = {
            K: np.median([row.rel_error for row in rows if row.K == K and row.ensemble == kind])
            for K in config.K_values
        }
        assert medians[400] >= 0.1
        assert medians[1500] <= 1e-3
        transitions[kind] = min(K for K, value in medians.items() if value <= 1e-3)
    assert 900 <= transitions[EnsembleKind.UNIT_MODULUS] <= 1300
    assert abs(transitions[EnsembleKind.UNIT_MODULUS] - transitions[EnsembleKind.GAUSSIAN]) <= 200
