"""Marginal inference for populations of hidden Markov chains.

Estimates per-node marginals from aggregate (histogram) observations by
iterative message scaling on the chain, with sliding-window variants for
streaming estimation, brute-force oracles, population simulators, and an
experiment runner.
"""

__version__ = "0.1.0"

from ._kernels import backend_name
from .chain import (
    AggregateObservation,
    ChainGraph,
    EdgePotential,
    HmmModel,
    NodePotential,
    StateSpace,
    build_hmm_chain,
    normalize_counts,
    obs,
)
from .engine import SbpDiagnostics, SbpResult, bethe_free_energy, run_sbp
from .errors import (
    CountMismatchError,
    DegeneracyError,
    ModelError,
    SizeError,
    StructureError,
    SupportViolationError,
    SwsbpError,
    ValidationError,
)
from .estimates import MarginalEstimate
from .experiment import (
    METHODS,
    ExperimentReport,
    ExperimentRow,
    emit_report,
    l1_error,
    load_report,
    run_experiment,
)
from .oracle import (
    brute_force_marginals,
    forward_backward,
    ipf_joint_projection,
    joint_tensor,
)
from .scenario import (
    KIND_BIRD_MIGRATION,
    KIND_RANDOM_HMM,
    GridWorld,
    LogLinearWeights,
    PopulationState,
    ScenarioConfig,
    grid_transition,
    initial_clusters,
    pinned_generator,
    random_hmm,
    sample_population,
    sensor_observation,
    simulate,
)
from .window import (
    MIN_WINDOW,
    StepResult,
    WindowState,
    WindowVariant,
    advance,
    init_window,
    run_stream,
)

__all__ = [
    "__version__",
    "backend_name",
    "AggregateObservation",
    "ChainGraph",
    "EdgePotential",
    "HmmModel",
    "NodePotential",
    "StateSpace",
    "build_hmm_chain",
    "normalize_counts",
    "obs",
    "SbpDiagnostics",
    "SbpResult",
    "bethe_free_energy",
    "run_sbp",
    "CountMismatchError",
    "DegeneracyError",
    "ModelError",
    "SizeError",
    "StructureError",
    "SupportViolationError",
    "SwsbpError",
    "ValidationError",
    "MarginalEstimate",
    "METHODS",
    "ExperimentReport",
    "ExperimentRow",
    "emit_report",
    "l1_error",
    "load_report",
    "run_experiment",
    "brute_force_marginals",
    "forward_backward",
    "ipf_joint_projection",
    "joint_tensor",
    "KIND_BIRD_MIGRATION",
    "KIND_RANDOM_HMM",
    "GridWorld",
    "LogLinearWeights",
    "PopulationState",
    "ScenarioConfig",
    "grid_transition",
    "initial_clusters",
    "pinned_generator",
    "random_hmm",
    "sample_population",
    "sensor_observation",
    "simulate",
    "MIN_WINDOW",
    "StepResult",
    "WindowState",
    "WindowVariant",
    "advance",
    "init_window",
    "run_stream",
]
