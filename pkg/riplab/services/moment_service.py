"""Moment service - exact all-ones moments and Monte Carlo moment checks."""

import itertools
import logging
import math
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from fractions import Fraction

import logfire
import numpy as np
from scipy.special import eval_legendre

from riplab.errors import InvalidArgumentError, SizeLimitError
from riplab.schemas.arrays import ComplexMatrix, as_complex_matrix
from riplab.schemas.moments import (
    DistributionSpec,
    DominanceReport,
    DominanceRow,
    MomentEstimate,
    MomentProductReport,
    ProductDistribution,
    VectorCaseRow,
)
from riplab.schemas.rng import RngStream
from riplab.services.measurement_service import (
    all_ones_matrix,
    draw_phases,
    random_unit_frobenius_matrix,
)

logger = logging.getLogger(__name__)

# Samples per Monte Carlo block; fixed so results never depend on the worker count.
MC_BLOCK = 16_384
COMPOSITION_CAP = 10**6
# ~10^4 decimal digits
LOG_PATH_BITS = 33_220

SquaredSampler = Callable[[int, np.random.Generator], np.ndarray]


# ==================== EXACT COMBINATORICS ====================


def _abelian_row(t_max: int, M: int) -> tuple[int, ...]:
    squares = [[math.comb(s, k) ** 2 for k in range(s + 1)] for s in range(t_max + 1)]
    row = [1] * (t_max + 1)
    for _ in range(M - 1):
        row = [sum(sq[k] * row[s - k] for k in range(s + 1)) for s, sq in enumerate(squares)]
    return tuple(row)


_abelian_rows: dict[int, tuple[int, ...]] = {}
_abelian_lock = threading.Lock()


def abelian_square_counts(t_max: int, M: int) -> tuple[int, ...]:
    """g(0..t_max, M) via g(t, M) = sum_k C(t,k)^2 g(t-k, M-1), g(t, 1) = 1.

    Rows are cached per M and grown geometrically.
    """
    if t_max < 0:
        raise InvalidArgumentError(f"t must be >= 0, got {t_max}")
    if M < 1:
        raise InvalidArgumentError(f"M must be >= 1, got {M}")
    with _abelian_lock:
        row = _abelian_rows.get(M)
        if row is None or len(row) <= t_max:
            length = max(t_max, 2 * len(row) if row else 0)
            row = _abelian_row(length, M)
            _abelian_rows[M] = row
    return row[: t_max + 1]


def abelian_square_count(t: int, M: int) -> int:
    """Number of abelian squares of length 2t over an M-letter alphabet."""
    return abelian_square_counts(t, M)[t]


def log_all_ones_moment(t: int, M: int, N: int) -> float:
    """ln of g(t,M) g(t,N) / (M^t N^t)."""
    if N < 1:
        raise InvalidArgumentError(f"N must be >= 1, got {N}")
    g_M, g_N = abelian_square_count(t, M), abelian_square_count(t, N)
    return math.log(g_M) + math.log(g_N) - t * (math.log(M) + math.log(N))


def exact_all_ones_moment(t: int, M: int, N: int) -> float:
    """E|u^H (11^T / sqrt(MN)) v|^{2t}, evaluated in rational arithmetic."""
    if N < 1:
        raise InvalidArgumentError(f"N must be >= 1, got {N}")
    numerator = abelian_square_count(t, M) * abelian_square_count(t, N)
    if numerator.bit_length() > LOG_PATH_BITS:
        try:
            return math.exp(log_all_ones_moment(t, M, N))
        except OverflowError:
            return math.inf
    try:
        return float(Fraction(numerator, M**t * N**t))
    except OverflowError:
        return math.inf


def legendre_sum(n: int, p: float, total: float = 1.0) -> float:
    """s_n(p) = sum_k C(n,k)^2 p^k (total - p)^(n-k), for 0 <= p <= total."""
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    if total <= 0:
        raise InvalidArgumentError(f"total must be positive, got {total}")
    if not 0.0 <= p <= total:
        raise InvalidArgumentError(f"p must lie in [0, {total}], got {p}")
    q = total - p
    return math.fsum(math.comb(n, k) ** 2 * p**k * q ** (n - k) for k in range(n + 1))


def legendre_sum_closed_form(n: int, p: float) -> float:
    """(2p-1)^n P_n(1/(2p-1)); undefined at p = 1/2."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p must lie in [0, 1], got {p}")
    if p == 0.5:
        raise InvalidArgumentError("closed form is singular at p = 1/2")
    d = 2.0 * p - 1.0
    return float(d**n * eval_legendre(n, 1.0 / d))


def _compositions(t: int, parts: int):
    """All (k_1..k_parts) with non-negative entries summing to t (stars and bars)."""
    for bars in itertools.combinations(range(t + parts - 1), parts - 1):
        previous = -1
        composition = []
        for bar in bars:
            composition.append(bar - previous - 1)
            previous = bar
        composition.append(t + parts - 1 - previous - 1)
        yield composition


def weighted_multinomial_sum(t: int, c: Sequence[float]) -> float:
    """sum_{k_1+..+k_M=t} multinomial(t; k)^2 prod_m c_m^{2 k_m}."""
    if t < 0:
        raise InvalidArgumentError(f"t must be >= 0, got {t}")
    weights = np.asarray(c, dtype=np.float64)
    if weights.ndim != 1 or weights.size < 1:
        raise InvalidArgumentError("weights must be a non-empty vector")
    if np.any(weights < 0):
        raise InvalidArgumentError("weights must be non-negative")
    if abs(float(np.sum(weights**2)) - 1.0) > 1e-9:
        raise InvalidArgumentError("weights must satisfy sum c_m^2 = 1")
    M = weights.size
    count = math.comb(t + M - 1, M - 1)
    if count > COMPOSITION_CAP:
        raise SizeLimitError(f"{count} compositions exceed the enumeration cap {COMPOSITION_CAP}")

    squared = [float(w) ** 2 for w in weights]
    t_factorial = math.factorial(t)
    terms = []
    for composition in _compositions(t, M):
        multinomial = t_factorial
        for k in composition:
            multinomial //= math.factorial(k)
        product = math.prod(w**k for w, k in zip(squared, composition))
        if product:
            terms.append(multinomial**2 * product)
    return math.fsum(terms)


# ==================== MONTE CARLO ====================


def _block_sizes(samples: int) -> list[int]:
    full, rest = divmod(samples, MC_BLOCK)
    return [MC_BLOCK] * full + ([rest] if rest else [])


def _block_statistics(
    sampler: SquaredSampler, t_values: Sequence[int], count: int, rng: RngStream
) -> np.ndarray:
    """Per-t (count, mean, M2) for one block of |.|^2 samples."""
    squared = sampler(count, rng.generator())
    stats = np.empty((len(t_values), 3))
    for i, t in enumerate(t_values):
        powers = squared**t
        mean = powers.mean()
        stats[i] = (count, mean, np.sum((powers - mean) ** 2))
    return stats


def _combine(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Merge (count, mean, M2) summaries of disjoint blocks."""
    n_a, mean_a, m2_a = left
    n_b, mean_b, m2_b = right
    n = n_a + n_b
    delta = mean_b - mean_a
    return np.array([n, mean_a + delta * n_b / n, m2_a + m2_b + delta**2 * n_a * n_b / n])


def _monte_carlo_moments(
    sampler: SquaredSampler,
    t_values: Sequence[int],
    samples: int,
    rng: RngStream,
    executor: Executor | None = None,
) -> list[MomentEstimate]:
    if samples < 2:
        raise InvalidArgumentError(f"samples must be >= 2, got {samples}")
    if any(t < 0 for t in t_values):
        raise InvalidArgumentError("moment orders must be >= 0")

    sizes = _block_sizes(samples)
    streams = [rng.child("block", index) for index in range(len(sizes))]

    def run_block(index: int) -> np.ndarray:
        return _block_statistics(sampler, t_values, sizes[index], streams[index])

    mapper = executor.map if executor is not None else map
    blocks = list(mapper(run_block, range(len(sizes))))

    estimates = []
    for i, t in enumerate(t_values):
        total = blocks[0][i]
        for block in blocks[1:]:
            total = _combine(total, block[i])
        n, mean, m2 = total
        stderr = math.sqrt(max(m2, 0.0) / (n - 1)) / math.sqrt(n)
        estimates.append(MomentEstimate(t=t, mean=max(mean, 0.0), stderr=stderr, samples=int(n)))
    return estimates


def bilinear_sampler(X: ComplexMatrix) -> SquaredSampler:
    """Sampler of |u^H X v|^2 for fresh unit-modulus u, v."""
    M, N = X.shape

    def sample(count: int, generator: np.random.Generator) -> np.ndarray:
        u = np.exp(1j * draw_phases(generator, (count, M)))
        v = np.exp(1j * draw_phases(generator, (count, N)))
        z = np.einsum("sn,sn->s", u.conj() @ X, v)
        return z.real**2 + z.imag**2

    return sample


def estimate_moments(
    X: ComplexMatrix,
    t_values: Sequence[int],
    samples: int,
    rng: RngStream,
    executor: Executor | None = None,
) -> list[MomentEstimate]:
    """E|u^H X v|^{2t} for several t from one shared sample set."""
    X = as_complex_matrix(X)
    return _monte_carlo_moments(bilinear_sampler(X), list(t_values), samples, rng, executor)


def estimate_moment(
    X: ComplexMatrix,
    t: int,
    samples: int,
    rng: RngStream,
    executor: Executor | None = None,
) -> MomentEstimate:
    """Monte Carlo mean and standard error of |u^H X v|^{2t}."""
    return estimate_moments(X, [t], samples, rng, executor)[0]


def estimate_vector_moment(x: np.ndarray, m: int, samples: int, rng: RngStream) -> MomentEstimate:
    """Monte Carlo estimate of E|x^T v|^{2m} for a unit-modulus v."""
    x = np.asarray(x, dtype=np.complex128).ravel()

    def sample(count: int, generator: np.random.Generator) -> np.ndarray:
        v = np.exp(1j * draw_phases(generator, (count, x.size)))
        z = v @ x
        return z.real**2 + z.imag**2

    return _monte_carlo_moments(sample, [m], samples, rng)[0]


def verify_vector_case(
    x: np.ndarray, m_max: int, samples: int, rng: RngStream
) -> list[VectorCaseRow]:
    """Check E|x^T v|^{2m} <= g(m,N)/N^m for a unit-norm x, m = 1..m_max."""
    x = np.asarray(x, dtype=np.complex128).ravel()
    if abs(np.linalg.norm(x) - 1.0) > 1e-9:
        raise InvalidArgumentError("x must have unit Euclidean norm")
    N = x.size
    rows = []
    for m in range(1, m_max + 1):
        estimate = estimate_vector_moment(x, m, samples, rng.child("order", m))
        uniform_value = float(Fraction(abelian_square_count(m, N), N**m))
        rows.append(
            VectorCaseRow(
                m=m,
                estimate=estimate,
                uniform_value=uniform_value,
                dominated=estimate.mean - 3 * estimate.stderr <= uniform_value,
            )
        )
    return rows


def verify_all_ones_dominance(
    M: int,
    N: int,
    t_max: int,
    num_matrices: int,
    samples: int,
    rng: RngStream,
    executor: Executor | None = None,
) -> DominanceReport:
    """Compare E|u^H X v|^{2t} of random unit-Frobenius X with the all-ones value.

    Matrix 0 is the normalized all-ones matrix itself (the equality case).
    """
    if t_max < 1:
        raise InvalidArgumentError(f"t_max must be >= 1, got {t_max}")
    if num_matrices < 1:
        raise InvalidArgumentError(f"num_matrices must be >= 1, got {num_matrices}")
    t_values = list(range(1, t_max + 1))
    exact = [exact_all_ones_moment(t, M, N) for t in t_values]

    def matrix_rows(matrix_id: int) -> list[DominanceRow]:
        if matrix_id == 0:
            X = all_ones_matrix(M, N)
        else:
            X = random_unit_frobenius_matrix(M, N, rng.child("matrix", matrix_id))
        estimates = estimate_moments(X, t_values, samples, rng.child("samples", matrix_id))
        return [
            DominanceRow(
                matrix_id=matrix_id,
                t=estimate.t,
                mc_mean=estimate.mean,
                mc_stderr=estimate.stderr,
                exact_all_ones=exact_value,
                margin=exact_value - (estimate.mean + 3 * estimate.stderr),
                dominated=estimate.mean - 3 * estimate.stderr <= exact_value,
            )
            for estimate, exact_value in zip(estimates, exact)
        ]

    with logfire.span("all-ones dominance {M}x{N}", M=M, N=N, t_max=t_max, matrices=num_matrices):
        mapper = executor.map if executor is not None else map
        rows = [row for chunk in mapper(matrix_rows, range(num_matrices)) for row in chunk]

    report = DominanceReport(M=M, N=N, samples=samples, rows=rows)
    if not report.all_dominated:
        violations = [(row.matrix_id, row.t) for row in rows if not row.dominated]
        logfire.warn("dominance violated", violations=violations[:20])
    return report


def _draw_product_variables(
    spec: DistributionSpec, count: int, samples: int, generator: np.random.Generator
) -> np.ndarray:
    if len(spec.scales) not in (1, count):
        raise InvalidArgumentError(f"need 1 or {count} scales, got {len(spec.scales)}")
    scale = np.broadcast_to(np.asarray(spec.scales, dtype=np.float64), (count,))
    shape = (samples, count)
    match spec.kind:
        case ProductDistribution.SQUARED_GAUSSIAN:
            return (scale * generator.standard_normal(shape)) ** 2
        case ProductDistribution.EXPONENTIAL:
            return generator.exponential(1.0, shape) * scale
        case ProductDistribution.UNIFORM:
            return generator.uniform(0.0, 1.0, shape) * scale
        case ProductDistribution.LOGNORMAL:
            return np.exp(scale * generator.standard_normal(shape))
        case ProductDistribution.CONSTANT:
            return np.broadcast_to(scale, shape).copy()
    raise InvalidArgumentError(f"unsupported distribution {spec.kind}")


def verify_moment_product_inequality(
    distribution: DistributionSpec,
    exponents: Sequence[int],
    samples: int,
    rng: RngStream,
) -> MomentProductReport:
    """Monte Carlo check of E[prod X_n^{k_n}] <= max_n E[X_n^t] with t = sum k_n."""
    if any(k < 0 for k in exponents):
        raise InvalidArgumentError("exponents must be non-negative")
    if not exponents:
        raise InvalidArgumentError("at least one exponent is required")
    if samples < 2:
        raise InvalidArgumentError(f"samples must be >= 2, got {samples}")
    k = np.asarray(exponents, dtype=np.int64)
    t = int(k.sum())
    values = _draw_product_variables(distribution, len(k), samples, rng.generator())

    product = np.prod(values**k, axis=1)
    powers = values**t
    root = math.sqrt(samples)
    product_mean = float(product.mean())
    product_stderr = float(product.std(ddof=1) / root)
    power_means = powers.mean(axis=0)
    power_stderrs = powers.std(ddof=1, axis=0) / root
    max_index = int(np.argmax(power_means))
    holder = float(np.prod(power_means ** (k / t))) if t > 0 else 1.0

    combined = math.hypot(product_stderr, float(power_stderrs[max_index]))
    largest = float(power_means[max_index])
    # means of equal constants can differ in the last bits
    holds = product_mean <= largest + 3 * combined + 1e-12 * abs(largest)
    return MomentProductReport(
        exponents=[int(e) for e in k],
        t=t,
        product_mean=product_mean,
        product_stderr=product_stderr,
        power_means=power_means.tolist(),
        power_stderrs=power_stderrs.tolist(),
        holder_bound=holder,
        max_index=max_index,
        holds=holds,
    )
