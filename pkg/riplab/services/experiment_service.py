"""Experiment service - runs one harness experiment and writes its CSV and manifest."""

import csv
import logging
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path

import logfire

from riplab import __version__
from riplab.schemas.ensemble import EnsembleKind
from riplab.schemas.experiment import Experiment, ExperimentConfig, RunManifest
from riplab.schemas.recovery import SweepConfig
from riplab.schemas.rng import RngStream
from riplab.schemas.tailbounds import TailSide
from riplab.services.measurement_service import random_unit_frobenius_matrix
from riplab.services.moment_service import (
    abelian_square_counts,
    exact_all_ones_moment,
    log_all_ones_moment,
    verify_all_ones_dominance,
)
from riplab.services.recovery_service import recovery_phase_sweep
from riplab.services.selftest_service import run_selftest
from riplab.services.tailbound_service import concentration_statistics, tail_bound, tail_estimate

logger = logging.getLogger(__name__)

CSV_HEADERS: dict[Experiment, tuple[str, ...]] = {
    Experiment.CONCENTRATION: ("trial", "K", "ensemble", "stat"),
    Experiment.MOMENTS: (
        "t",
        "M",
        "N",
        "abelian_M",
        "abelian_N",
        "exact_all_ones",
        "log_exact_all_ones",
    ),
    Experiment.DOMINANCE: ("matrix_id", "t", "mc_mean", "mc_stderr", "exact_all_ones", "dominated"),
    Experiment.TAILBOUND: (
        "side",
        "alpha",
        "K",
        "M",
        "N",
        "h_star",
        "per_measurement_log",
        "total_bound",
        "empirical",
        "empirical_stderr",
    ),
    Experiment.SWEEP: (
        "K",
        "solver",
        "ensemble",
        "trial",
        "rel_error",
        "residual",
        "iterations",
        "converged",
    ),
    Experiment.SELFTEST: ("suite", "passed", "seconds", "detail"),
}


def format_value(value: object) -> str:
    """CSV cell text: floats round-trip exactly, flags are 0/1, enums use their value."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> int:
    """Write header and rows; returns the number of data rows."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
            count += 1
    return count


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest")


class ExperimentService:
    """Runs one configured experiment on a shared worker pool."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.failures: list[str] = []

    def _stream(self, *keys: object) -> RngStream:
        return RngStream.for_trial(self.config.seed, "/".join(str(key) for key in keys), 0)

    # ==================== EXPERIMENTS ====================

    def concentration_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        """||A(X)||^2 realizations for one fixed unit-Frobenius X per (ensemble, K)."""
        c = self.config
        X = random_unit_frobenius_matrix(c.M, c.N, self._stream("concentration", "X"))
        rows = []
        for kind in c.ensemble:
            for K in c.K:
                values = concentration_statistics(
                    X, K, c.trials, self._stream("concentration", kind.value, K), kind, executor
                )
                rows += [(trial, K, kind, float(v)) for trial, v in enumerate(values)]
        return rows

    def moments_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        c = self.config
        g_M = abelian_square_counts(c.tmax, c.M)
        g_N = abelian_square_counts(c.tmax, c.N)
        return [
            (
                t,
                c.M,
                c.N,
                g_M[t],
                g_N[t],
                exact_all_ones_moment(t, c.M, c.N),
                log_all_ones_moment(t, c.M, c.N),
            )
            for t in range(c.tmax + 1)
        ]

    def dominance_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        c = self.config
        report = verify_all_ones_dominance(
            c.M, c.N, c.tmax, c.num_matrices, c.samples, self._stream("dominance"), executor
        )
        return [
            (row.matrix_id, row.t, row.mc_mean, row.mc_stderr, row.exact_all_ones, row.dominated)
            for row in report.rows
        ]

    def tailbound_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        """Analytic bound next to the empirical tail of a fixed unit-Frobenius X."""
        c = self.config
        X = random_unit_frobenius_matrix(c.M, c.N, self._stream("tailbound", "X"))
        rows = []
        for K in c.K:
            values = concentration_statistics(
                X, K, c.trials, self._stream("tailbound", K), EnsembleKind.UNIT_MODULUS, executor
            )
            for side in TailSide:
                for alpha in c.alpha:
                    if side == TailSide.LOWER and alpha > 1:
                        logger.debug("skipping lower tail at alpha=%s > 1", alpha)
                        continue
                    report = tail_bound(side, alpha, K, c.M, c.N)
                    empirical = tail_estimate(side, values, alpha, K)
                    rows.append(
                        (
                            side,
                            alpha,
                            K,
                            c.M,
                            c.N,
                            report.h_star,
                            report.per_measurement_log,
                            report.total_bound,
                            empirical.estimate,
                            empirical.stderr,
                        )
                    )
        return rows

    def sweep_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        c = self.config
        sweep = SweepConfig(
            M=c.M,
            N=c.N,
            r=c.r,
            K_values=c.K,
            solvers=c.solver,
            ensembles=c.ensemble,
            trials=c.trials,
            master_seed=c.seed,
            noise_std=c.noise_std,
            options=c.options,
        )
        rows = []
        for row in recovery_phase_sweep(sweep, executor):
            if row.error is not None:
                self.failures.append(
                    f"K={row.K} solver={row.solver.value} ensemble={row.ensemble.value} "
                    f"trial={row.trial}: {row.error}"
                )
            rows.append(
                (
                    row.K,
                    row.solver,
                    row.ensemble,
                    row.trial,
                    row.rel_error,
                    row.residual,
                    row.iterations,
                    row.converged,
                )
            )
        return rows

    def selftest_rows(self, executor: ThreadPoolExecutor) -> list[tuple]:
        rows = []
        for result in run_selftest(self.config.seed, executor):
            if not result.passed:
                self.failures.append(f"suite {result.suite}: {result.detail}")
            rows.append((result.suite, result.passed, result.seconds, result.detail))
        return rows

    # ==================== RUN ====================

    def run(self) -> RunManifest:
        """Write the experiment CSV and its manifest; failures are listed in the manifest."""
        c = self.config
        producers = {
            Experiment.CONCENTRATION: self.concentration_rows,
            Experiment.MOMENTS: self.moments_rows,
            Experiment.DOMINANCE: self.dominance_rows,
            Experiment.TAILBOUND: self.tailbound_rows,
            Experiment.SWEEP: self.sweep_rows,
            Experiment.SELFTEST: self.selftest_rows,
        }
        started = time.perf_counter()
        with logfire.span("experiment {experiment}", experiment=c.experiment.value, seed=c.seed):
            with ThreadPoolExecutor(max_workers=c.workers) as executor:
                rows = producers[c.experiment](executor)
            count = write_csv(c.out, CSV_HEADERS[c.experiment], rows)

        manifest = RunManifest(
            config=c.model_dump(mode="json"),
            version=__version__,
            wall_clock_seconds=time.perf_counter() - started,
            row_counts={c.experiment.value: count},
            master_seed=c.seed,
            failures=self.failures,
        )
        manifest_path(c.out).write_text(manifest.to_text(), encoding="utf-8")
        logfire.info(
            "experiment finished",
            experiment=c.experiment.value,
            rows=count,
            failures=len(self.failures),
        )
        return manifest
