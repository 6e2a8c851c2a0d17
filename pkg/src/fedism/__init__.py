"""Desk-scale federated learning simulator with sharpness-matched aggregation.

The package trains a small dense classifier across simulated clients whose
data quality differs, and compares aggregation strategies: size-weighted
averaging (FedAvg), sharpness-aware local training (SALT), sharpness-powered
global weights (SAGA), their combination (FedISM), and a loss-weighted
fairness baseline.
"""

from .data import (
    CorruptionSpec,
    LocalDataset,
    PartitionSpec,
    Sample,
    assign_and_corrupt,
    dirichlet_partition,
    gen_task,
    make_corrupted_test,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    ModelSpec,
    RoundMetrics,
    TaskSpec,
    run_experiment,
)
from .federation import (
    AggregationWeights,
    ClientReport,
    FederationState,
    MethodSpec,
    aggregate,
    fedavg_weights,
    local_train,
    loss_weights,
    method_name,
    run_round,
    sharpness_weights,
    smooth_weights,
    verify_minimax_equivalence,
)
from .metrics import balanced_accuracy, evaluate, landscape_slice, macro_auc_ovr
from .nn import (
    ClassPriors,
    MlpArchitecture,
    adjust_logits,
    batch_loss_and_grad,
    ce_loss,
    finite_diff_grad,
    forward,
    init_params,
)
from .sharpness import (
    PerturbationVector,
    SharpnessValue,
    optimal_perturbation,
    plain_step,
    sam_step,
    sharpness,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights",
    "ClassPriors",
    "ClientReport",
    "CorruptionSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "FederationState",
    "LocalDataset",
    "MethodSpec",
    "MlpArchitecture",
    "ModelSpec",
    "PartitionSpec",
    "PerturbationVector",
    "RoundMetrics",
    "Sample",
    "SharpnessValue",
    "TaskSpec",
    "adjust_logits",
    "aggregate",
    "assign_and_corrupt",
    "balanced_accuracy",
    "batch_loss_and_grad",
    "ce_loss",
    "dirichlet_partition",
    "evaluate",
    "fedavg_weights",
    "finite_diff_grad",
    "forward",
    "gen_task",
    "init_params",
    "landscape_slice",
    "local_train",
    "loss_weights",
    "macro_auc_ovr",
    "make_corrupted_test",
    "method_name",
    "optimal_perturbation",
    "plain_step",
    "run_experiment",
    "run_round",
    "sam_step",
    "sharpness",
    "sharpness_weights",
    "smooth_weights",
    "verify_minimax_equivalence",
]
