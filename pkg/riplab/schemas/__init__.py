from riplab.schemas.ensemble import (
    EnsembleKind,
    GaussianEnsemble,
    MeasurementEnsemble,
    UnitModulusEnsemble,
)
from riplab.schemas.experiment import Experiment, ExperimentConfig, RunManifest
from riplab.schemas.moments import (
    DistributionSpec,
    DominanceReport,
    DominanceRow,
    MomentEstimate,
    MomentProductReport,
    ProductDistribution,
    VectorCaseRow,
)
from riplab.schemas.recovery import (
    FactorPair,
    RecoveryResult,
    Solver,
    SolverOptions,
    SweepConfig,
    SweepRow,
)
from riplab.schemas.rng import RngStream
from riplab.schemas.tailbounds import (
    ConcentrationSample,
    TailBoundReport,
    TailEstimate,
    TailSide,
)

__all__ = [
    "EnsembleKind",
    "GaussianEnsemble",
    "MeasurementEnsemble",
    "UnitModulusEnsemble",
    "Experiment",
    "ExperimentConfig",
    "RunManifest",
    "DistributionSpec",
    "DominanceReport",
    "DominanceRow",
    "MomentEstimate",
    "MomentProductReport",
    "ProductDistribution",
    "VectorCaseRow",
    "FactorPair",
    "RecoveryResult",
    "Solver",
    "SolverOptions",
    "SweepConfig",
    "SweepRow",
    "RngStream",
    "ConcentrationSample",
    "TailBoundReport",
    "TailEstimate",
    "TailSide",
]
