"""Tail bound service - Chernoff bounds on ||A(X)||^2 and their empirical counterparts.

Upper tail: Pr(||A(X)||^2 >= 1 + a) <= min_h (E e^{hZ} e^{-h(1+a)})^K with Z = |u^H X v|^2,
where E e^{hZ} is majorized term by term with the all-ones moments.
Lower tail: Pr(||A(X)||^2 <= 1 - a) <= min_h ((1 - h + h^2 E2 / 2) e^{h(1-a)})^K, from
e^{-x} <= 1 - x + x^2/2 for x >= 0.
"""

import logging
import math
from collections.abc import Callable
from concurrent.futures import Executor
from functools import lru_cache

import logfire
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from riplab.errors import InvalidArgumentError, TruncationError
from riplab.schemas.arrays import ComplexMatrix, as_complex_matrix
from riplab.schemas.ensemble import EnsembleKind
from riplab.schemas.rng import RngStream
from riplab.schemas.tailbounds import ConcentrationSample, TailBoundReport, TailEstimate, TailSide
from riplab.services.measurement_service import draw_complex_gaussian, draw_phases
from riplab.services.moment_service import abelian_square_counts, exact_all_ones_moment

logger = logging.getLogger(__name__)

H_MAX = 2.0
SERIES_CAP = 200
LOG_SERIES_RTOL = math.log(1e-16)
GRID_POINTS = 20_000
OPTIMIZER_ITERS = 200
OPTIMIZER_TOL = 1e-10
# log-objective value standing in for non-convergent series inside the optimizer
PENALTY = 1e6
# complex entries per concentration block (bounds memory, independent of workers)
BLOCK_BUDGET = 1 << 20


@lru_cache(maxsize=64)
def _log_series_coefficients(M: int, N: int) -> np.ndarray:
    """ln(E_t / t!) for t = 0..SERIES_CAP with E_0 = E_1 = 1 and all-ones E_t beyond."""
    g_M = abelian_square_counts(SERIES_CAP, M)
    g_N = abelian_square_counts(SERIES_CAP, N)
    t = np.arange(SERIES_CAP + 1)
    log_moments = np.array(
        [math.log(a) + math.log(b) for a, b in zip(g_M, g_N)]
    ) - t * (math.log(M) + math.log(N))
    log_moments[:2] = 0.0
    return log_moments - gammaln(t + 1)


def _log_mgf_grid(h: np.ndarray, M: int, N: int) -> np.ndarray:
    """ln of the truncated majorant series at each h; +inf where the cap is reached."""
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    coefficients = _log_series_coefficients(M, N)
    t = np.arange(SERIES_CAP + 1)
    terms = np.log(h)[:, None] * t[None, :] + coefficients[None, :]
    partial = np.logaddexp.accumulate(terms, axis=1)
    # term t is below rtol * (sum of terms 0..t-1)
    small = terms[:, 1:] < LOG_SERIES_RTOL + partial[:, :-1]
    stopped = small.any(axis=1)
    first = np.argmax(small, axis=1) + 1
    values = partial[np.arange(h.size), first]
    return np.where(stopped, values, np.inf)


def _check_dims(K: int, M: int, N: int) -> None:
    for name, value in (("K", K), ("M", M), ("N", N)):
        if value < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")


def log_mgf_series_upper(h: float, M: int, N: int) -> float:
    """ln of sum_t h^t/t! E_t (all-ones majorant for t >= 2)."""
    if not h > 0:
        raise InvalidArgumentError(f"h must be positive, got {h}")
    _check_dims(1, M, N)
    value = float(_log_mgf_grid(np.array([h]), M, N)[0])
    if not math.isfinite(value):
        raise TruncationError(f"MGF series did not converge within {SERIES_CAP} terms at h={h}")
    return value


def mgf_series_upper(h: float, M: int, N: int) -> float:
    """Majorant of E e^{h |u^H X v|^2} for any unit-Frobenius X."""
    try:
        return math.exp(log_mgf_series_upper(h, M, N))
    except OverflowError:
        return math.inf


def _minimize(
    log_objective: Callable[[np.ndarray], np.ndarray], h_max: float
) -> tuple[float, float]:
    """Minimize a log-objective over (0, h_max]: dense grid, then bounded Brent refinement.

    Returns (h_star, value) of the better of the two.
    """
    grid = h_max * np.arange(1, GRID_POINTS + 1) / GRID_POINTS
    values = log_objective(grid)
    finite = np.isfinite(values)
    if not finite.any():
        return float(grid[0]), math.inf
    best = int(np.argmin(np.where(finite, values, np.inf)))
    h_grid, v_grid = float(grid[best]), float(values[best])

    h_limit = float(grid[finite][-1])

    def scalar(h: float) -> float:
        value = float(log_objective(np.array([h]))[0])
        return value if math.isfinite(value) else PENALTY

    result = minimize_scalar(
        scalar,
        bounds=(grid[0] * 1e-3, h_limit),
        method="bounded",
        options={"xatol": OPTIMIZER_TOL, "maxiter": OPTIMIZER_ITERS},
    )
    if result.success and result.fun < v_grid:
        return float(result.x), float(result.fun)
    return h_grid, v_grid


def _report(
    side: TailSide, alpha: float, K: int, M: int, N: int, h_star: float, log_factor: float
) -> TailBoundReport:
    degenerate = not log_factor < 0.0
    if degenerate:
        logfire.warn("degenerate tail bound", side=side.value, alpha=alpha, M=M, N=N)
        log_factor = max(log_factor, 0.0) if math.isfinite(log_factor) else 0.0
    log_bound = K * log_factor
    return TailBoundReport(
        side=side,
        alpha=alpha,
        K=K,
        M=M,
        N=N,
        h_star=h_star,
        per_measurement_log=log_factor,
        log_bound=log_bound,
        total_bound=min(1.0, math.exp(min(log_bound, 0.0))),
        degenerate=degenerate,
    )


def upper_tail_bound(alpha: float, K: int, M: int, N: int) -> TailBoundReport:
    """Bound on Pr(||A(X)||^2 >= 1 + alpha) for unit-Frobenius X."""
    if not alpha > 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    _check_dims(K, M, N)

    def log_objective(h: np.ndarray) -> np.ndarray:
        return _log_mgf_grid(h, M, N) - h * (1.0 + alpha)

    h_star, log_factor = _minimize(log_objective, H_MAX)
    logger.debug("upper bound alpha=%s M=%s N=%s: h*=%.6g", alpha, M, N, h_star)
    return _report(TailSide.UPPER, alpha, K, M, N, h_star, log_factor)


def lower_tail_bound(alpha: float, K: int, M: int, N: int) -> TailBoundReport:
    """Bound on Pr(||A(X)||^2 <= 1 - alpha) for unit-Frobenius X."""
    if not 0 < alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    _check_dims(K, M, N)
    second = exact_all_ones_moment(2, M, N)

    def log_objective(h: np.ndarray) -> np.ndarray:
        return np.log(1.0 - h + 0.5 * second * h**2) + h * (1.0 - alpha)

    h_star, log_factor = _minimize(log_objective, 1.0 / second)
    return _report(TailSide.LOWER, alpha, K, M, N, h_star, log_factor)


def lower_tail_bound_fixed(
    alpha: float, K: int, M: int, N: int, h: float = 0.25, second_moment: float = 4.0
) -> TailBoundReport:
    """Lower bound at a fixed Chernoff parameter with a given bound on E[Z^2].

    The defaults give the per-measurement factor 0.875 e^{(1-alpha)/4}.
    """
    if not 0 < alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    if not h > 0:
        raise InvalidArgumentError(f"h must be positive, got {h}")
    _check_dims(K, M, N)
    log_factor = math.log(1.0 - h + 0.5 * second_moment * h**2) + h * (1.0 - alpha)
    return _report(TailSide.LOWER, alpha, K, M, N, h, log_factor)


def tail_bound(side: TailSide, alpha: float, K: int, M: int, N: int) -> TailBoundReport:
    if side == TailSide.UPPER:
        return upper_tail_bound(alpha, K, M, N)
    return lower_tail_bound(alpha, K, M, N)


# ==================== EMPIRICAL ====================


def _statistic_block(
    X: ComplexMatrix, K: int, count: int, kind: EnsembleKind, rng: RngStream
) -> np.ndarray:
    """||A(X)||^2 for `count` fresh ensembles."""
    generator = rng.generator()
    M, N = X.shape
    if kind == EnsembleKind.UNIT_MODULUS:
        u = np.exp(1j * draw_phases(generator, (count, K, M)))
        v = np.exp(1j * draw_phases(generator, (count, K, N)))
        z = np.einsum("bkn,bkn->bk", u.conj() @ X, v)
    else:
        # <A_k, X> is exactly CN(0, ||X||_F^2) for iid unit-variance Gaussian A_k
        z = draw_complex_gaussian(generator, (count, K), std=float(np.linalg.norm(X)))
    return (z.real**2 + z.imag**2).sum(axis=1) / K


def concentration_statistics(
    X: ComplexMatrix,
    K: int,
    trials: int,
    rng: RngStream,
    kind: EnsembleKind = EnsembleKind.UNIT_MODULUS,
    executor: Executor | None = None,
) -> np.ndarray:
    """Array of ||A(X)||^2 over `trials` independent ensembles, in trial order."""
    X = as_complex_matrix(X)
    _check_dims(K, *X.shape)
    M, N = X.shape
    per_block = max(1, BLOCK_BUDGET // (K * (M + N)))
    starts = list(range(0, trials, per_block))

    def run_block(index: int) -> np.ndarray:
        count = min(per_block, trials - starts[index])
        return _statistic_block(X, K, count, kind, rng.child("trials", index))

    mapper = executor.map if executor is not None else map
    return np.concatenate(list(mapper(run_block, range(len(starts)))))


def concentration_samples(
    X: ComplexMatrix,
    K: int,
    trials: int,
    rng: RngStream,
    kind: EnsembleKind = EnsembleKind.UNIT_MODULUS,
    executor: Executor | None = None,
) -> ConcentrationSample:
    """Realizations of ||A(X)||^2 with their mean and unbiased variance."""
    if trials < 2:
        raise InvalidArgumentError(f"trials must be >= 2, got {trials}")
    values = concentration_statistics(X, K, trials, rng, kind, executor)
    return ConcentrationSample(
        K=K,
        ensemble=kind,
        values=values.tolist(),
        mean=float(values.mean()),
        variance=float(values.var(ddof=1)),
    )


def tail_estimate(side: TailSide, values: np.ndarray, alpha: float, K: int) -> TailEstimate:
    """Fraction of statistics with ||A(X)||^2 >= 1 + alpha (upper) or <= 1 - alpha (lower)."""
    if not alpha > 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    trials = int(values.size)
    if side == TailSide.UPPER:
        hits = np.count_nonzero(values >= 1.0 + alpha)
    else:
        hits = np.count_nonzero(values <= 1.0 - alpha)
    estimate = hits / trials
    return TailEstimate(
        side=side,
        alpha=alpha,
        K=K,
        trials=trials,
        estimate=estimate,
        stderr=math.sqrt(estimate * (1.0 - estimate) / trials),
    )


def empirical_tail_probability(
    side: TailSide,
    X: ComplexMatrix,
    alpha: float,
    K: int,
    trials: int,
    rng: RngStream,
    kind: EnsembleKind = EnsembleKind.UNIT_MODULUS,
    executor: Executor | None = None,
) -> TailEstimate:
    """Empirical tail probability of ||A(X)||^2 over fresh ensembles."""
    X = as_complex_matrix(X)
    if abs(np.linalg.norm(X) - 1.0) > 1e-9:
        raise InvalidArgumentError("X must have unit Frobenius norm")
    if trials < 100:
        raise InvalidArgumentError(f"trials must be >= 100, got {trials}")
    if not alpha > 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    values = concentration_statistics(X, K, trials, rng, kind, executor)
    return tail_estimate(side, values, alpha, K)
