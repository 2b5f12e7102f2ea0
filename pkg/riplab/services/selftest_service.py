"""Self-test service - fast oracle suites behind the `selftest` subcommand."""

import itertools
import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import Executor

import logfire
import numpy as np
from pydantic import BaseModel

from riplab.errors import RiplabError, SelfTestFailure
from riplab.schemas.ensemble import EnsembleKind
from riplab.schemas.moments import DistributionSpec, ProductDistribution
from riplab.schemas.recovery import SolverOptions
from riplab.schemas.rng import RngStream
from riplab.schemas.tailbounds import TailSide
from riplab.services.linalg import truncated_svd
from riplab.services.measurement_service import (
    apply,
    apply_adjoint,
    draw_complex_gaussian,
    random_low_rank_matrix,
    sample_ensemble,
)
from riplab.services.moment_service import (
    abelian_square_count,
    legendre_sum,
    legendre_sum_closed_form,
    verify_moment_product_inequality,
    weighted_multinomial_sum,
)
from riplab.services.recovery_service import (
    altmin_recover,
    factored_loss,
    wirtinger_gradients,
)
from riplab.services.tailbound_service import tail_bound

logger = logging.getLogger(__name__)


class SuiteResult(BaseModel):
    """One row of the self-test report."""

    suite: str
    passed: bool
    seconds: float
    detail: str


def _brute_force_abelian(t: int, M: int) -> int:
    total = 0
    for k in itertools.product(range(t + 1), repeat=M):
        if sum(k) == t:
            total += (math.factorial(t) // math.prod(math.factorial(x) for x in k)) ** 2
    return total


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise SelfTestFailure(message)


def check_combinatorics(rng: RngStream) -> str:
    for t in range(6):
        for M in range(1, 5):
            _check(abelian_square_count(t, M) == _brute_force_abelian(t, M), f"g({t},{M})")
    for t in range(11):
        _check(abelian_square_count(t, 2) == math.comb(2 * t, t), f"g({t},2)")
    for M in range(1, 101):
        _check(abelian_square_count(2, M) == 2 * M * M - M, f"g(2,{M})")
    return "brute force, central binomial and quadratic identities hold"


def check_legendre(rng: RngStream) -> str:
    grid = np.linspace(0.0, 1.0, 21)
    for n in range(2, 13):
        values = [legendre_sum(n, float(p)) for p in grid]
        _check(int(np.argmax(values)) == 10, f"argmax for n={n}")
        for p in (0.1, 0.3, 0.8):
            closed = legendre_sum_closed_form(n, p)
            _check(math.isclose(legendre_sum(n, p), closed, rel_tol=1e-9), f"closed form n={n}")
    return "maximum at p=1/2 for n=2..12"


def check_multinomial(rng: RngStream) -> str:
    generator = rng.generator()
    for trial in range(200):
        M = int(generator.integers(1, 6))
        t = int(generator.integers(0, 7))
        c = generator.uniform(0.0, 1.0, M)
        c /= np.linalg.norm(c)
        bound = abelian_square_count(t, M) / M**t
        _check(weighted_multinomial_sum(t, c) <= bound * (1 + 1e-9), f"trial {trial}")
        uniform = np.full(M, 1.0 / math.sqrt(M))
        uniform_value = weighted_multinomial_sum(t, uniform)
        _check(math.isclose(uniform_value, bound, rel_tol=1e-9), f"uniform weights t={t} M={M}")
    return "200 random weight vectors below the uniform value"


def check_moment_product(rng: RngStream) -> str:
    generator = rng.generator()
    kinds = list(ProductDistribution)
    for trial in range(50):
        count = int(generator.integers(1, 4))
        spec = DistributionSpec(
            kind=kinds[trial % len(kinds)],
            scales=generator.uniform(0.2, 1.0, count).tolist(),
        )
        exponents = generator.integers(0, 4, count).tolist()
        report = verify_moment_product_inequality(
            spec, exponents, 20_000, rng.child("product", trial)
        )
        _check(report.holds, f"trial {trial}: {spec.kind.value} {exponents}")
    return "50 randomized trials"


def check_adjoint(rng: RngStream) -> str:
    worst = 0.0
    for trial in range(100):
        kind = EnsembleKind.UNIT_MODULUS if trial % 2 == 0 else EnsembleKind.GAUSSIAN
        stream = rng.child("adjoint", trial)
        generator = stream.generator()
        M, N, K = (int(x) for x in generator.integers(1, 9, 3))
        ensemble = sample_ensemble(kind, M, N, K, stream.child("ensemble"))
        X = draw_complex_gaussian(generator, (M, N))
        y = draw_complex_gaussian(generator, K)
        lhs = np.vdot(y, apply(ensemble, X))
        rhs = np.vdot(apply_adjoint(ensemble, y), X)
        gap = abs(lhs - rhs) / max(1.0, abs(lhs))
        worst = max(worst, gap)
        _check(gap <= 1e-10, f"trial {trial}: {gap:.3g}")
    return f"worst relative gap {worst:.2e}"


def check_svd(rng: RngStream) -> str:
    for trial in range(100):
        generator = rng.child("svd", trial).generator()
        M, N = (int(x) for x in generator.integers(1, 9, 2))
        r = int(generator.integers(1, min(M, N) + 1))
        X = draw_complex_gaussian(generator, (M, N))
        svd = truncated_svd(X, r)
        eigenvalues = np.sort(np.linalg.eigvalsh(X.conj().T @ X))[::-1][: min(M, N)]
        _check(
            np.allclose(svd.s**2, eigenvalues[:r], rtol=1e-8, atol=1e-12), f"spectrum trial {trial}"
        )
        best = math.sqrt(max(float(np.sum(eigenvalues[r:])), 0.0))
        gap = np.linalg.norm(X - svd.matrix())
        _check(gap <= best + 1e-9 * np.linalg.norm(X), f"trial {trial}")
    return "100 instances orthonormal and rank-optimal"


def _numeric_gradient(
    loss: Callable[[np.ndarray], float], Z: np.ndarray, step: float
) -> np.ndarray:
    """Central differences: real steps give the real part, imaginary steps the imaginary part."""
    numeric = np.zeros_like(Z)
    for index in np.ndindex(Z.shape):
        for unit in (1.0, 1j):
            bump = np.zeros_like(Z)
            bump[index] = step * unit
            numeric[index] += unit * (loss(Z + bump) - loss(Z - bump)) / (2 * step)
    return numeric


def check_gradients(rng: RngStream, step: float = 1e-5) -> str:
    worst = 0.0
    for trial in range(20):
        stream = rng.child("gradient", trial)
        generator = stream.generator()
        M, N, r, K = 4, 3, 2, 30
        ensemble = sample_ensemble(EnsembleKind.UNIT_MODULUS, M, N, K, stream.child("ensemble"))
        y = draw_complex_gaussian(generator, K)
        L = draw_complex_gaussian(generator, (M, r))
        R = draw_complex_gaussian(generator, (N, r))
        grad_L, grad_R = wirtinger_gradients(ensemble, y, L, R)
        numeric_L = _numeric_gradient(lambda Z: factored_loss(ensemble, y, Z, R), L, step)
        numeric_R = _numeric_gradient(lambda Z: factored_loss(ensemble, y, L, Z), R, step)
        for name, numeric, grad in (("L", numeric_L, grad_L), ("R", numeric_R, grad_R)):
            error = float(np.linalg.norm(numeric - grad) / np.linalg.norm(grad))
            worst = max(worst, error)
            _check(error <= 1e-5, f"trial {trial} grad_{name}: {error:.3g}")
    return f"worst relative error {worst:.2e}"


def check_tail_bounds(rng: RngStream) -> str:
    for alpha in np.round(np.arange(0.1, 1.0, 0.1), 1):
        for side in TailSide:
            report = tail_bound(side, float(alpha), 10, 4, 4)
            _check(report.per_measurement_log < 0, f"{side.value} alpha={alpha}")
            doubled = tail_bound(side, float(alpha), 20, 4, 4)
            squared = math.isclose(doubled.log_bound, 2 * report.log_bound, rel_tol=1e-12)
            _check(squared, f"doubling K, {side.value} alpha={alpha}")
    return "negative exponent for alpha=0.1..0.9 on both sides"


def check_recovery(rng: RngStream) -> str:
    M, N, r = 8, 10, 1
    K = 6 * (M + N) * r
    truth = random_low_rank_matrix(M, N, r, rng.child("truth"))
    ensemble = sample_ensemble(EnsembleKind.UNIT_MODULUS, M, N, K, rng.child("ensemble"))
    result = altmin_recover(
        ensemble, apply(ensemble, truth), r, SolverOptions(tol=1e-10), truth=truth
    )
    _check(result.rel_error <= 1e-6, f"rel_error {result.rel_error:.3g}")
    return f"altmin rel_error {result.rel_error:.2e} in {result.iterations} iterations"


SUITES: dict[str, Callable[[RngStream], str]] = {
    "combinatorics": check_combinatorics,
    "legendre": check_legendre,
    "multinomial": check_multinomial,
    "moment_product": check_moment_product,
    "adjoint": check_adjoint,
    "svd": check_svd,
    "gradients": check_gradients,
    "tail_bounds": check_tail_bounds,
    "recovery": check_recovery,
}


def run_suite(name: str, master_seed: int) -> SuiteResult:
    started = time.perf_counter()
    with logfire.span("selftest {suite}", suite=name):
        try:
            detail = SUITES[name](RngStream.for_trial(master_seed, f"selftest/{name}", 0))
            passed = True
        except RiplabError as e:
            detail = f"{type(e).__name__}: {e}"
            passed = False
            logfire.error("self-test suite failed", suite=name, detail=detail)
    return SuiteResult(
        suite=name, passed=passed, seconds=time.perf_counter() - started, detail=detail
    )


def run_selftest(master_seed: int, executor: Executor | None = None) -> list[SuiteResult]:
    """Run every suite; results come back in suite order."""
    mapper = executor.map if executor is not None else map
    results = list(mapper(lambda name: run_suite(name, master_seed), SUITES))
    logger.info("self-test: %d/%d suites passed", sum(r.passed for r in results), len(results))
    return results
