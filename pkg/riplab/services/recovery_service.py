"""Recovery service - low-rank solvers and the phase-transition sweep."""

import logging
import math
from concurrent.futures import Executor

import logfire
import numpy as np
import scipy.linalg

from riplab.errors import InvalidArgumentError, NumericalFailureError
from riplab.schemas.arrays import ComplexMatrix, ComplexVector, as_complex_matrix, as_complex_vector
from riplab.schemas.ensemble import MeasurementEnsemble
from riplab.schemas.recovery import (
    FactorPair,
    RecoveryResult,
    Solver,
    SolverOptions,
    SweepConfig,
    SweepRow,
)
from riplab.schemas.rng import RngStream
from riplab.services.linalg import conjugate_gradient, singular_value_threshold, truncated_svd
from riplab.services.measurement_service import (
    add_measurement_noise,
    apply,
    apply_adjoint,
    gram_matrix,
    random_low_rank_matrix,
    sample_ensemble,
)

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3


def relative_error(X_hat: ComplexMatrix, X_true: ComplexMatrix) -> float:
    """||X_hat - X_true||_F / ||X_true||_F."""
    X_hat, X_true = as_complex_matrix(X_hat, "X_hat"), as_complex_matrix(X_true, "X_true")
    if X_hat.shape != X_true.shape:
        raise InvalidArgumentError(f"shape mismatch: {X_hat.shape} vs {X_true.shape}")
    scale = np.linalg.norm(X_true)
    if scale == 0:
        raise InvalidArgumentError("relative error is undefined for a zero truth")
    return float(np.linalg.norm(X_hat - X_true) / scale)


def _validate(ensemble: MeasurementEnsemble, y: ComplexVector, r: int | None) -> ComplexVector:
    y = as_complex_vector(y)
    if y.shape[0] != ensemble.K:
        raise InvalidArgumentError(f"y must have length K={ensemble.K}, got {y.shape[0]}")
    if r is not None and not 1 <= r <= min(ensemble.M, ensemble.N):
        raise InvalidArgumentError(f"rank must lie in [1, {min(ensemble.M, ensemble.N)}], got {r}")
    return y


def spectral_init(ensemble: MeasurementEnsemble, y: ComplexVector, r: int) -> ComplexMatrix:
    """Rank-r truncation of A*(y)."""
    y = _validate(ensemble, y, r)
    return truncated_svd(apply_adjoint(ensemble, y), r).matrix()


def balanced_factors(X: ComplexMatrix, r: int) -> FactorPair:
    """L = U sqrt(S), R = V sqrt(S) from the rank-r SVD, so L^H L = R^H R."""
    svd = truncated_svd(X, r)
    root = np.sqrt(svd.s)
    return FactorPair(L=svd.U * root, R=svd.V * root)


class _Trace:
    """Per-iteration residuals (and errors when the truth is known)."""

    def __init__(
        self, ensemble: MeasurementEnsemble, y: ComplexVector, truth: ComplexMatrix | None
    ):
        self.ensemble = ensemble
        self.y = y
        self.truth = truth
        self.residuals: list[float] = []
        self.errors: list[float] | None = [] if truth is not None else None

    def residual(self, X: ComplexMatrix) -> float:
        return float(np.linalg.norm(apply(self.ensemble, X) - self.y))

    def record(self, X: ComplexMatrix, residual: float) -> None:
        self.residuals.append(residual)
        if self.errors is not None:
            self.errors.append(relative_error(X, self.truth))

    def result(
        self, solver: Solver, X: ComplexMatrix, residual: float, converged: bool
    ) -> RecoveryResult:
        return RecoveryResult(
            solver=solver,
            X_hat=X,
            rel_error=relative_error(X, self.truth) if self.truth is not None else None,
            residual=residual,
            iterations=len(self.residuals),
            converged=converged,
            residual_trace=list(self.residuals),
            error_trace=list(self.errors) if self.errors is not None else None,
        )


def _zero_result(
    solver: Solver, ensemble: MeasurementEnsemble, truth: ComplexMatrix | None
) -> RecoveryResult:
    X = np.zeros((ensemble.M, ensemble.N), dtype=np.complex128)
    return _Trace(ensemble, np.zeros(ensemble.K, dtype=np.complex128), truth).result(
        solver, X, 0.0, True
    )


def _initial_factors(
    ensemble: MeasurementEnsemble, y: ComplexVector, r: int, init: FactorPair | None
) -> FactorPair:
    if init is None:
        return balanced_factors(spectral_init(ensemble, y, r), r)
    if init.L.shape != (ensemble.M, r) or init.R.shape != (ensemble.N, r):
        raise InvalidArgumentError("initial factors do not match (M, r) and (N, r)")
    return init


# ==================== ALTERNATING MINIMIZATION ====================


def altmin_recover(
    ensemble: MeasurementEnsemble,
    y: ComplexVector,
    r: int,
    options: SolverOptions | None = None,
    truth: ComplexMatrix | None = None,
    init: FactorPair | None = None,
) -> RecoveryResult:
    """Alternate exact least-squares updates of L and R in X = L R^H.

    Each half-step solves the ridge-regularized normal equations by conjugate gradient.
    """
    options = options or SolverOptions()
    y = _validate(ensemble, y, r)
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0:
        return _zero_result(Solver.ALTMIN, ensemble, truth)

    factors = _initial_factors(ensemble, y, r, init)
    L, R = np.array(factors.L, dtype=np.complex128), np.array(factors.R, dtype=np.complex128)
    trace = _Trace(ensemble, y, truth)
    target = options.tol * y_norm
    ridge = options.ridge
    X = L @ R.conj().T
    residual = trace.residual(X)

    with logfire.span("altmin K={K} r={r}", K=ensemble.K, r=r):
        for _ in range(options.iterations_for(Solver.ALTMIN)):
            if residual <= target:
                break
            back = apply_adjoint(ensemble, y)

            def normal_L(L_var: np.ndarray) -> np.ndarray:
                image = apply(ensemble, L_var @ R.conj().T)
                return apply_adjoint(ensemble, image) @ R + ridge * L_var

            try:
                L = conjugate_gradient(
                    normal_L, back @ R, L, options.inner_cg_tol, options.inner_cg_iters
                )

                # X = L R^H is linear in conj(R)
                def normal_Rc(Rc_var: np.ndarray) -> np.ndarray:
                    image = apply(ensemble, L @ Rc_var.T)
                    return apply_adjoint(ensemble, image).T @ L.conj() + ridge * Rc_var

                Rc = conjugate_gradient(
                    normal_Rc,
                    back.T @ L.conj(),
                    R.conj(),
                    options.inner_cg_tol,
                    options.inner_cg_iters,
                )
            except NumericalFailureError as e:
                partial = trace.result(Solver.ALTMIN, X, residual, False)
                raise NumericalFailureError(f"altmin inner solve failed: {e}", partial) from e
            R = Rc.conj()
            X = L @ R.conj().T
            residual = trace.residual(X)
            trace.record(X, residual)

    converged = residual <= target
    logfire.info("altmin finished", iterations=len(trace.residuals), converged=converged)
    return trace.result(Solver.ALTMIN, X, residual, converged)


# ==================== FACTORED GRADIENT DESCENT ====================


def factored_loss(
    ensemble: MeasurementEnsemble, y: ComplexVector, L: np.ndarray, R: np.ndarray
) -> float:
    """1/2 ||A(L R^H) - y||^2 + 1/8 ||L^H L - R^H R||_F^2."""
    res = apply(ensemble, L @ R.conj().T) - y
    imbalance = L.conj().T @ L - R.conj().T @ R
    return 0.5 * float(np.vdot(res, res).real) + 0.125 * float(np.linalg.norm(imbalance) ** 2)


def wirtinger_gradients(
    ensemble: MeasurementEnsemble, y: ComplexVector, L: np.ndarray, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of factored_loss w.r.t. the conjugate factors (scaled by 2).

    For a real perturbation dL the loss changes by Re<grad_L, dL>.
    """
    res = apply(ensemble, L @ R.conj().T) - y
    back = apply_adjoint(ensemble, res)
    imbalance = L.conj().T @ L - R.conj().T @ R
    grad_L = back @ R + 0.5 * L @ imbalance
    grad_R = back.conj().T @ L - 0.5 * R @ imbalance
    return grad_L, grad_R


def factored_gd_recover(
    ensemble: MeasurementEnsemble,
    y: ComplexVector,
    r: int,
    options: SolverOptions | None = None,
    truth: ComplexMatrix | None = None,
    init: FactorPair | None = None,
) -> RecoveryResult:
    """Gradient descent on (L, R) from the spectral initialization.

    The fixed step is step_size / sigma_1(spectral_init)^2.
    """
    options = options or SolverOptions()
    y = _validate(ensemble, y, r)
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0:
        return _zero_result(Solver.GD, ensemble, truth)

    start = spectral_init(ensemble, y, r)
    sigma_1 = truncated_svd(start, 1).s[0]
    if sigma_1 == 0:
        raise NumericalFailureError("spectral initialization is zero; no step size available")
    if init is None:
        factors = balanced_factors(start, r)
    else:
        factors = _initial_factors(ensemble, y, r, init)
    L, R = np.array(factors.L, dtype=np.complex128), np.array(factors.R, dtype=np.complex128)
    step = options.step_size / sigma_1**2
    trace = _Trace(ensemble, y, truth)
    target = options.tol * y_norm
    X = L @ R.conj().T
    residual = trace.residual(X)

    with logfire.span("factored gd K={K} r={r}", K=ensemble.K, r=r):
        for _ in range(options.iterations_for(Solver.GD)):
            if residual <= target:
                break
            grad_L, grad_R = wirtinger_gradients(ensemble, y, L, R)
            L, R = L - step * grad_L, R - step * grad_R
            X = L @ R.conj().T
            residual = trace.residual(X)
            trace.record(X, residual)
            if not math.isfinite(residual) or residual > DIVERGENCE_FACTOR * y_norm:
                partial = None
                if math.isfinite(residual):
                    partial = trace.result(Solver.GD, X, residual, False)
                raise NumericalFailureError(
                    f"gradient descent diverged (residual {residual:.3g})", partial
                )

    converged = residual <= target
    logfire.info("factored gd finished", iterations=len(trace.residuals), converged=converged)
    return trace.result(Solver.GD, X, residual, converged)


# ==================== NUCLEAR NORM ====================


def nuclear_norm_recover(
    ensemble: MeasurementEnsemble,
    y: ComplexVector,
    options: SolverOptions | None = None,
    truth: ComplexMatrix | None = None,
) -> RecoveryResult:
    """min ||X||_* subject to A(X) = y by operator splitting.

    X-step: affine projection of Z - U using a Cholesky factorization of gram + ridge I.
    Z-step: singular-value soft-thresholding of X + U at 1/rho.
    """
    options = options or SolverOptions()
    y = _validate(ensemble, y, None)
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0:
        return _zero_result(Solver.NUCLEAR, ensemble, truth)

    gram = gram_matrix(ensemble) + options.ridge * np.eye(ensemble.K)
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise NumericalFailureError(
            f"Gram matrix factorization failed (ridge={options.ridge:g}); try a larger ridge"
        ) from e

    def project(W: ComplexMatrix) -> ComplexMatrix:
        correction = scipy.linalg.cho_solve(factor, y - apply(ensemble, W), check_finite=False)
        return W + apply_adjoint(ensemble, correction)

    shape = (ensemble.M, ensemble.N)
    Z = np.zeros(shape, dtype=np.complex128)
    U = np.zeros(shape, dtype=np.complex128)
    X = Z
    trace = _Trace(ensemble, y, truth)
    residual = math.inf
    converged = False

    with logfire.span("nuclear norm K={K}", K=ensemble.K, rho=options.rho):
        for _ in range(options.iterations_for(Solver.NUCLEAR)):
            X = project(Z - U)
            Z = singular_value_threshold(X + U, 1.0 / options.rho)
            U = U + X - Z
            residual = trace.residual(X)
            trace.record(X, residual)
            gap = float(np.linalg.norm(X - Z)) / max(1.0, float(np.linalg.norm(X)))
            if max(residual / y_norm, gap) <= options.tol:
                converged = True
                break

    logfire.info("nuclear norm finished", iterations=len(trace.residuals), converged=converged)
    return trace.result(Solver.NUCLEAR, X, residual, converged)


def recover(
    solver: Solver,
    ensemble: MeasurementEnsemble,
    y: ComplexVector,
    r: int,
    options: SolverOptions | None = None,
    truth: ComplexMatrix | None = None,
) -> RecoveryResult:
    if solver == Solver.NUCLEAR:
        return nuclear_norm_recover(ensemble, y, options, truth)
    if solver == Solver.ALTMIN:
        return altmin_recover(ensemble, y, r, options, truth)
    return factored_gd_recover(ensemble, y, r, options, truth)


# ==================== SWEEP ====================


def recovery_phase_sweep(config: SweepConfig, executor: Executor | None = None) -> list[SweepRow]:
    """Recovery error over a grid of (K, ensemble, solver, trial) cells.

    The truth depends on (K, trial) and the ensemble on (kind, K, trial), so every solver and
    ensemble kind sees matched instances. Failed cells are recorded and the sweep continues.
    """
    cells = [
        (K, kind, solver, trial)
        for K in config.K_values
        for kind in config.ensembles
        for solver in config.solvers
        for trial in range(config.trials)
    ]

    def run_cell(cell) -> SweepRow:
        K, kind, solver, trial = cell
        seed = config.master_seed
        truth = random_low_rank_matrix(
            config.M, config.N, config.r, RngStream.for_trial(seed, f"sweep/truth/{K}", trial)
        )
        ensemble = sample_ensemble(
            kind,
            config.M,
            config.N,
            K,
            RngStream.for_trial(seed, f"sweep/ensemble/{kind.value}/{K}", trial),
        )
        y = add_measurement_noise(
            apply(ensemble, truth),
            config.noise_std,
            RngStream.for_trial(seed, f"sweep/noise/{kind.value}/{K}", trial),
        )
        with logfire.span(
            "sweep cell {solver} {ensemble} K={K}",
            solver=solver.value,
            ensemble=kind.value,
            K=K,
            trial=trial,
        ):
            try:
                result = recover(solver, ensemble, y, config.r, config.options, truth)
            except NumericalFailureError as e:
                logfire.error("sweep cell failed", K=K, solver=solver.value, error=str(e))
                partial = e.partial
                return SweepRow(
                    K=K,
                    solver=solver,
                    ensemble=kind,
                    trial=trial,
                    rel_error=math.nan,
                    residual=partial.residual if partial else math.nan,
                    iterations=partial.iterations if partial else 0,
                    converged=False,
                    error=str(e),
                )
        return SweepRow(
            K=K,
            solver=solver,
            ensemble=kind,
            trial=trial,
            rel_error=result.rel_error,
            residual=result.residual,
            iterations=result.iterations,
            converged=result.converged,
        )

    mapper = executor.map if executor is not None else map
    return list(mapper(run_cell, cells))
