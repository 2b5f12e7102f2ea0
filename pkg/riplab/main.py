"""Command-line entry point: `riplab <experiment> [flags]`."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import logfire
from pydantic import ValidationError

from riplab.config import settings
from riplab.errors import ConfigError, RiplabError
from riplab.schemas.ensemble import EnsembleKind
from riplab.schemas.experiment import Experiment, ExperimentConfig
from riplab.schemas.recovery import Solver, SolverOptions
from riplab.services.experiment_service import ExperimentService, manifest_path

logger = logging.getLogger(__name__)

# K grids used when neither the config file nor the flags give one
DEFAULT_K = {
    Experiment.CONCENTRATION: "200,600,1000,1400",
    Experiment.TAILBOUND: "10,20,50",
    Experiment.SWEEP: "400:1500:100",
}
DEFAULT_SWEEP_TRIALS = 5

INT_KEYS = {"M", "N", "r", "trials", "samples", "tmax", "num_matrices", "seed", "workers"}
FLOAT_KEYS = {"noise_std"}
LIST_KEYS = {"K", "alpha", "solver", "ensemble"}
OPTION_KEYS = {
    "max_iters": int,
    "tol": float,
    "step_size": float,
    "rho": float,
    "ridge": float,
    "inner_cg_tol": float,
    "inner_cg_iters": int,
}
KNOWN_KEYS = INT_KEYS | FLOAT_KEYS | LIST_KEYS | {"out"} | set(OPTION_KEYS)


def configure_observability() -> None:
    logging.basicConfig(level=settings.log_level, format="%(levelname)s %(name)s: %(message)s")
    logfire.configure(
        send_to_logfire="if-token-present",
        token=settings.logfire_token or None,
        service_name=settings.service_name,
        environment=settings.app_env,
        console=False,
    )


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message: str):
        raise ConfigError("argv", message)


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    for flag in ("M", "N", "K", "r", "trials", "samples", "tmax", "alpha", "solver"):
        common.add_argument(f"--{flag}", dest=flag)
    common.add_argument("--ensemble", dest="ensemble")
    common.add_argument("--seed", dest="seed")
    common.add_argument("--out", dest="out")
    common.add_argument("--workers", dest="workers")
    common.add_argument("--config", dest="config", type=Path, help="Flat key=value file")
    common.add_argument("--num-matrices", dest="num_matrices")
    common.add_argument("--noise", dest="noise_std", help="Measurement noise standard deviation")
    for key in OPTION_KEYS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=key)

    parser = _ArgumentParser(prog="riplab", description=__doc__)
    subcommands = parser.add_subparsers(dest="experiment", required=True)
    for experiment in Experiment:
        subcommands.add_parser(experiment.value, parents=[common])
    return parser


def expand_k_values(text: str) -> list[int]:
    """'200,600' or 'start:stop:step' (stop included when hit), or a mix of both."""
    values: list[int] = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            parts = item.split(":")
            if len(parts) != 3:
                raise ConfigError("K", f"range {item!r} must be start:stop:step")
            try:
                start, stop, step = (int(part) for part in parts)
            except ValueError as e:
                raise ConfigError("K", f"range {item!r} is not integral") from e
            if step < 1:
                raise ConfigError("K", f"range step must be positive, got {step}")
            values.extend(range(start, stop + 1, step))
        else:
            try:
                values.append(int(item))
            except ValueError as e:
                raise ConfigError("K", f"{item!r} is not an integer") from e
    return values


def _split(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def coerce(key: str, raw: str) -> object:
    """Typed value for one config key given as text."""
    try:
        if key == "K":
            return expand_k_values(raw)
        if key == "alpha":
            return [float(item) for item in _split(raw)]
        if key == "solver":
            return [Solver(item) for item in _split(raw)]
        if key == "ensemble":
            return [EnsembleKind(item) for item in _split(raw)]
        if key in INT_KEYS:
            return int(raw)
        if key in FLOAT_KEYS:
            return float(raw)
        if key in OPTION_KEYS:
            return OPTION_KEYS[key](raw)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(key, f"malformed value {raw!r}") from e
    return Path(raw)


def read_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment line."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {number}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown configuration key")
        values[key] = raw
    return values


def _validation_key(error: ValidationError) -> tuple[str, str]:
    first = error.errors()[0]
    if first["loc"]:
        return str(first["loc"][0]), first["msg"]
    # model validators prefix their message with the key
    message = first["msg"].removeprefix("Value error, ")
    key, _, rest = message.partition(":")
    return key.strip(), rest.strip() or message


def parse_config(
    argv: Sequence[str] | None = None, config_file: Path | None = None
) -> ExperimentConfig:
    """Resolve settings defaults < config file < flags into a validated config."""
    args = vars(build_parser().parse_args(argv))
    experiment = Experiment(args.pop("experiment"))
    config_file = args.pop("config") or config_file

    raw: dict[str, str] = {}
    if experiment in DEFAULT_K:
        raw["K"] = DEFAULT_K[experiment]
    if config_file is not None:
        raw.update(read_config_file(Path(config_file)))
    raw.update({key: value for key, value in args.items() if value is not None})

    values = {key: coerce(key, text) for key, text in raw.items()}
    options = {key: values.pop(key) for key in OPTION_KEYS if key in values}
    defaults = {
        "M": settings.default_M,
        "N": settings.default_N,
        "r": settings.default_r,
        "trials": (
            DEFAULT_SWEEP_TRIALS if experiment == Experiment.SWEEP else settings.default_trials
        ),
        "samples": settings.default_samples,
        "tmax": settings.default_t_max,
        "seed": settings.default_seed,
        "workers": settings.workers,
        "out": Path(f"{experiment.value}.csv"),
    }
    try:
        config = ExperimentConfig(
            experiment=experiment,
            **{**defaults, **values},
            options=SolverOptions(seed=values.get("seed", settings.default_seed), **options),
        )
    except ValidationError as e:
        key, message = _validation_key(e)
        raise ConfigError(key, message) from e

    parent = config.out.resolve().parent
    if not parent.is_dir():
        raise ConfigError("out", f"directory {parent} does not exist")
    return config


def run(config: ExperimentConfig) -> int:
    """Run one experiment; 0 on success, 2 when any cell or suite failed."""
    manifest = ExperimentService(config).run()
    rows = sum(manifest.row_counts.values())
    print(f"{config.experiment.value}: wrote {rows} rows to {config.out}")
    if manifest.failures:
        print(
            f"{len(manifest.failures)} failures, see {manifest_path(config.out)}",
            file=sys.stderr,
        )
        return 2
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    configure_observability()
    try:
        return run(parse_config(argv))
    except RiplabError as e:
        logger.debug("run aborted", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
