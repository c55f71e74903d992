"""Data schemas using msgspec structs."""

from app.schemas.base import ArrayStruct, BaseStruct
from app.schemas.experiment import (
    RESULTS_SCHEMA_VERSION,
    BenchmarkRecord,
    ExperimentSpec,
    MetricRecord,
    SelfTestCheck,
)
from app.schemas.inference import (
    BernoulliMessage,
    MessageGrid,
    Moments,
    RefineResult,
    SupportEstimate,
    SupportPolicy,
    VariationalState,
)
from app.schemas.model import (
    ChannelTruth,
    DynamicGrid,
    GridAscentResult,
    GridGradient,
    GridLikelihoodContext,
    HybridCombiner,
    ObservationModel,
)
from app.schemas.prior import IIDSupportPrior, Markov2DSupportPrior, PriorHyperParams, SupportPrior
from app.schemas.solver import IterationRecord, OmpPath, SolverConfig, SolveResult

__all__ = (
    "RESULTS_SCHEMA_VERSION",
    "ArrayStruct",
    "BaseStruct",
    "BenchmarkRecord",
    "BernoulliMessage",
    "ChannelTruth",
    "DynamicGrid",
    "ExperimentSpec",
    "GridAscentResult",
    "GridGradient",
    "GridLikelihoodContext",
    "HybridCombiner",
    "IIDSupportPrior",
    "IterationRecord",
    "Markov2DSupportPrior",
    "MessageGrid",
    "MetricRecord",
    "Moments",
    "ObservationModel",
    "OmpPath",
    "PriorHyperParams",
    "RefineResult",
    "SelfTestCheck",
    "SolveResult",
    "SolverConfig",
    "SupportEstimate",
    "SupportPolicy",
    "SupportPrior",
    "VariationalState",
)
