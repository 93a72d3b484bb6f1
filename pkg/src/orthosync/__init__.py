"""Synchronization over the orthogonal and rotation groups.

Estimate n unknown d x d group elements from noisy pairwise products
observed on a random graph: data generation, spectral initialization,
iterative polar refinement, alignment losses, Monte Carlo experiment
drivers, and the Bayesian lower-bound numerics that certify the
sigma^2 d(d-1)/(2np) risk.
"""

from .algorithms import (
    EigenFailure,
    IterationConfig,
    OracleResult,
    SkewCheckResult,
    Trajectory,
    default_iteration_count,
    iterate_once,
    oracle_one_step,
    run_pipeline,
    skew_projection_check,
    spectral_init,
)
from .experiments import (
    MAX_FLAG_RATE,
    RATIO_BANDS,
    RESULTS_SCHEMA_VERSION,
    ExperimentSpec,
    Mode,
    Summary,
    SweepPoint,
    TrialRecord,
    rate_sweep,
    run_experiment,
    spec_echo,
    summarize,
    summary_to_dict,
    trial_seed,
    write_results_csv,
    write_results_json,
    write_summary_json,
)
from .group_ops import (
    GroupKind,
    RankDeficient,
    align,
    is_orthogonal,
    is_rotation,
    loss,
    orthogonality_defect,
    pairwise_loss,
    polar_factor,
    special_polar_factor,
)
from .lower_bound import (
    IdentityViolation,
    InfeasibleParams,
    InformationBundle,
    PriorParams,
    PriorRotation,
    VanTreesEstimate,
    construct_Q,
    derivative_bound,
    expected_acceptance_rate,
    feasible_radius,
    information_bundle,
    jacobian_Q,
    num_pairs,
    pair_indices,
    prior_density,
    prior_mass,
    sample_prior,
    vantrees_estimate,
)
from .model import (
    SyncInstance,
    SyncParams,
    assemble_masked_matrix,
    generate_instance,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    sample_ground_truth,
    save_instance,
    substream,
)

__version__ = "0.1.0"

__all__ = [
    "EigenFailure",
    "ExperimentSpec",
    "GroupKind",
    "IdentityViolation",
    "InfeasibleParams",
    "InformationBundle",
    "IterationConfig",
    "MAX_FLAG_RATE",
    "Mode",
    "OracleResult",
    "PriorParams",
    "PriorRotation",
    "RATIO_BANDS",
    "RESULTS_SCHEMA_VERSION",
    "RankDeficient",
    "SkewCheckResult",
    "Summary",
    "SweepPoint",
    "SyncInstance",
    "SyncParams",
    "Trajectory",
    "TrialRecord",
    "VanTreesEstimate",
    "align",
    "assemble_masked_matrix",
    "construct_Q",
    "default_iteration_count",
    "derivative_bound",
    "expected_acceptance_rate",
    "feasible_radius",
    "generate_instance",
    "information_bundle",
    "instance_from_dict",
    "instance_to_dict",
    "is_orthogonal",
    "is_rotation",
    "iterate_once",
    "jacobian_Q",
    "load_instance",
    "loss",
    "num_pairs",
    "oracle_one_step",
    "orthogonality_defect",
    "pair_indices",
    "pairwise_loss",
    "polar_factor",
    "prior_density",
    "prior_mass",
    "rate_sweep",
    "run_experiment",
    "run_pipeline",
    "sample_ground_truth",
    "sample_prior",
    "save_instance",
    "skew_projection_check",
    "spec_echo",
    "special_polar_factor",
    "spectral_init",
    "substream",
    "summarize",
    "summary_to_dict",
    "trial_seed",
    "vantrees_estimate",
    "write_results_csv",
    "write_results_json",
    "write_summary_json",
]
